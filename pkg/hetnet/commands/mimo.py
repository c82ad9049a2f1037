from __future__ import annotations

import argparse
from typing import Optional

from hetnet.commands._common import add_common_arguments, build_spec, run_and_report
from hetnet.models.experiment import ExperimentSpec, MethodSpec

MIMO_METHODS = ("two-stage", "maxsinr-wmmse")
CANDIDATES_KEY = "two_stage.candidates_per_bs"


def _candidates(text: str) -> str:
    if text.lower() in ("cell", "none", "all"):
        return "none"
    if not text.isdigit() or int(text) < 1:
        raise argparse.ArgumentTypeError("--candidates takes a positive count or 'cell'")
    return text


def _sweep(text: str) -> list[str]:
    values = [part.strip() for part in text.split(",") if part.strip()]
    if not values:
        raise argparse.ArgumentTypeError("--sweep takes a list such as 4,6,8,cell")
    return [_candidates(value) for value in values]


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("mimo", help="two-stage association with per-cell WMMSE")
    add_common_arguments(parser)
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--candidates",
        type=_candidates,
        help="candidate users per BS and slot (S_j), or 'cell' for every associated user",
    )
    group.add_argument(
        "--sweep",
        type=_sweep,
        help="run the two-stage method once per candidate count, e.g. 4,6,8,cell",
    )
    parser.set_defaults(func=run)


def expand_sweep(methods: list[MethodSpec], sweep: Optional[list[str]]) -> list[MethodSpec]:
    """Replace each two-stage method by one labelled copy per candidate count."""

    if not sweep:
        return methods
    expanded = []
    for method in methods:
        if method.name != "two-stage":
            expanded.append(method)
            continue
        for value in sweep:
            suffix = "cell" if value == "none" else f"S{value}"
            expanded.append(
                method.model_copy(
                    update={
                        "label": f"{method.display_name}-{suffix}",
                        "options": {**method.options, CANDIDATES_KEY: value},
                    }
                )
            )
    return expanded


def run(args: argparse.Namespace) -> int:
    extra = None if args.candidates is None else {CANDIDATES_KEY: args.candidates}
    spec: ExperimentSpec = build_spec(
        args, allowed=MIMO_METHODS, default=("two-stage", "maxsinr-wmmse"), extra_options=extra
    )
    spec = spec.model_copy(update={"methods": expand_sweep(spec.methods, args.sweep)})
    return run_and_report(spec)
