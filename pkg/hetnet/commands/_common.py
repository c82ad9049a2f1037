from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Iterable, Optional

from hetnet.models.experiment import ExperimentSpec, MethodSpec, Report
from hetnet.services.config_service import ScenarioFile, load_config, parse_config_text
from hetnet.services.dependencies import get_experiment_service

logger = logging.getLogger(__name__)


def parse_seeds(text: str) -> list[int]:
    """``3`` or ``1,2,5`` or ``0-9`` (inclusive), combinable with commas."""

    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        low, dash, high = part.partition("-")
        try:
            if dash:
                first, last = int(low), int(high)
                if last < first:
                    raise ValueError
                seeds.extend(range(first, last + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid seed list: {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"invalid seed list: {text!r}")
    return seeds


def add_common_arguments(parser: argparse.ArgumentParser, *, methods: bool = True) -> None:
    parser.add_argument("--config", type=Path, help="INI scenario/solver configuration file")
    parser.add_argument("--seed", type=parse_seeds, default=[0], help="seed list, e.g. 0,1,2 or 0-19")
    parser.add_argument("--out", type=Path, help="directory for CSV/JSON outputs")
    if methods:
        parser.add_argument(
            "--method",
            action="append",
            dest="methods",
            help="method name or a [method:LABEL] section of the config (repeatable)",
        )
        parser.add_argument("--trace", action="store_true", help="write per-run convergence traces")


def load_scenario(args: argparse.Namespace) -> ScenarioFile:
    if args.config is None:
        return parse_config_text("")
    return load_config(args.config)


def resolve_methods(
    requested: Optional[Iterable[str]],
    scenario: ScenarioFile,
    *,
    allowed: Iterable[str],
    default: Iterable[str],
) -> list[MethodSpec]:
    allowed = set(allowed)
    specs = []
    for name in requested or default:
        spec = scenario.methods.get(name) or MethodSpec(name=name)
        if spec.name not in allowed:
            raise ValueError(f"method {name!r} is not available here (choose from {sorted(allowed)})")
        specs.append(spec)
    return specs


def build_spec(
    args: argparse.Namespace,
    *,
    allowed: Iterable[str],
    default: Iterable[str],
    extra_options: Optional[dict[str, object]] = None,
) -> ExperimentSpec:
    scenario = load_scenario(args)
    methods = resolve_methods(args.methods, scenario, allowed=allowed, default=default)
    if extra_options:
        methods = [m.model_copy(update={"options": {**m.options, **extra_options}}) for m in methods]
    return ExperimentSpec(
        scenario=scenario.network,
        methods=methods,
        seeds=args.seed,
        outputs=args.out,
        write_traces=args.trace,
        solver_options=scenario.solver_options,
    )


def print_report(report: Report) -> None:
    print(f"{'method':<20} {'seeds':>5} {'failed':>6} {'utility':>12} {'p5':>8} {'p50':>8} {'p95':>8} {'macro':>6}")
    for s in report.summaries:
        if s.utility_mean is None:
            print(f"{s.method:<20} {s.seeds:>5} {s.failed:>6} {'-':>12}")
            continue
        pct = s.rate_percentiles_mbps
        print(
            f"{s.method:<20} {s.seeds:>5} {s.failed:>6} {s.utility_mean:>12.4f} "
            f"{pct['p5']:>8.3f} {pct['p50']:>8.3f} {pct['p95']:>8.3f} {s.macro_user_share:>6.3f}"
        )
    for outcome in report.outcomes:
        if not outcome.ok:
            print(f"seed {outcome.seed} {outcome.method}: FAILED ({outcome.error})")


def run_and_report(spec: ExperimentSpec) -> int:
    service = get_experiment_service(spec.outputs)
    report = service.run_blocking(spec)
    print_report(report)
    if spec.outputs is not None:
        logger.info("Results written to %s", spec.outputs)
    return 2 if report.failed else 0
