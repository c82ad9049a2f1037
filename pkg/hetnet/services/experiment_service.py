from __future__ import annotations

import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np
from tqdm import tqdm

from hetnet.models.experiment import (
    BenchEntry,
    BenchReport,
    CandidateRow,
    ExperimentSpec,
    MethodSpec,
    MethodSummary,
    Report,
    SeedOutcome,
)
from hetnet.services.baseline_service import max_sinr_assoc, subgradient_solve
from hetnet.services.config_service import SOLVER_SECTIONS, HarnessConfig, SolverSettings
from hetnet.services.dcd_service import (
    Association,
    association_value,
    dcd_solve,
    duality_gap_bound,
)
from hetnet.services.joint_service import (
    JointResult,
    direct_dual_solve,
    iterate_assoc_power,
    iterate_maxsinr_power,
    maxsinr_optpower_solve,
)
from hetnet.services.mimo_service import (
    TwoStageResult,
    maxsinr_wmmse_solve,
    two_stage_solve,
)
from hetnet.services.network_service import (
    MBPS,
    NetworkInstance,
    gen_topology,
    log_utility,
    max_power,
    network_utility,
    rate_report,
    user_rates,
    utility_matrix,
)
from hetnet.services.output_service import OutputService

logger = logging.getLogger(__name__)

UTILITY_CHECK_TOL = 1e-6
PERCENTILES = (5, 50, 95)

# Section that bare option keys of each method override.
METHOD_SECTIONS: dict[str, Optional[str]] = {
    "max-sinr": None,
    "dcd": "dcd",
    "subgradient": "subgradient",
    "joint-dcd": "joint",
    "joint-maxsinr": "joint",
    "direct-dual": "direct_dual",
    "maxsinr-optpower": "direct_dual",
    "two-stage": "two_stage",
    "maxsinr-wmmse": "two_stage",
}
MIMO_METHODS = {"two-stage", "maxsinr-wmmse"}

DUAL_TRACE_HEADER = ("iteration", "updated_bs", "dual_objective", "primal_utility")
JOINT_TRACE_HEADER = (
    "round",
    "utility",
    "macro_user_fraction",
    "macro_mean_psd",
    "pico_mean_psd",
    "association_adopted",
)
DIRECT_DUAL_TRACE_HEADER = (
    "iteration",
    "updated_bs",
    "dual_objective",
    "best_primal_utility",
    "power_solver_calls",
)
SLOT_TRACE_HEADER = ("slot", "user", "rate_bps", "serving_bs", "scheduled")
POWER_TRACE_HEADER = ("round", "iteration", "utility", "step_size", "max_projected_gradient")


class ExperimentServiceError(RuntimeError):
    pass


class ReportConsistencyError(ExperimentServiceError):
    pass


@dataclass
class MethodRun:
    association: Association
    rates_bps: np.ndarray
    reported_utility: float
    duality_gap_bound: Optional[float] = None
    metrics: dict[str, float] = field(default_factory=dict)
    trace_header: tuple[str, ...] = ()
    trace_rows: list[tuple[Any, ...]] = field(default_factory=list)
    power_trace_rows: list[tuple[Any, ...]] = field(default_factory=list)


def _opt(value: Optional[int]) -> Any:
    return "" if value is None else value


def settings_for(method: MethodSpec, base: SolverSettings) -> SolverSettings:
    """Apply a method's option overrides; ``section.key`` targets another section."""

    sections: dict[str, dict[str, Any]] = {}
    primary = METHOD_SECTIONS[method.name]
    for key, value in method.options.items():
        section, dot, option = key.partition(".")
        if not dot:
            if primary is None:
                raise ValueError(f"method {method.name} takes no options (got {key!r})")
            section, option = primary, key
        if section not in SOLVER_SECTIONS:
            raise ValueError(f"unknown solver section {section!r} in option {key!r}")
        sections.setdefault(section, {})[option] = value
    return base.with_sections(sections)


# ---------------------------------------------------------------------------
# Method dispatch
# ---------------------------------------------------------------------------


def _power_rows(result: JointResult) -> list[tuple[Any, ...]]:
    return [
        (number, row.iteration, row.utility, row.step_size, row.max_projected_gradient)
        for number, row in result.power_trace
    ]


def _joint_run(inst: NetworkInstance, result: JointResult) -> MethodRun:
    rows = [
        (r.round, r.utility, r.macro_user_fraction, r.macro_mean_psd, r.pico_mean_psd, r.association_adopted)
        for r in result.trace
    ]
    return MethodRun(
        association=result.association,
        rates_bps=user_rates(inst, result.association, result.p),
        reported_utility=result.utility,
        metrics={"rounds": float(result.rounds), "converged": float(result.converged)},
        trace_header=JOINT_TRACE_HEADER,
        trace_rows=rows,
        power_trace_rows=_power_rows(result),
    )


def _mimo_run(result: TwoStageResult) -> MethodRun:
    rows = [
        (record.slot, user, float(record.rates_bps[user]), int(result.association.bs_of[user]), bool(record.scheduled[user]))
        for record in result.slots
        for user in range(result.association.num_users)
    ]
    return MethodRun(
        association=result.association,
        rates_bps=result.average_rates_bps,
        reported_utility=result.utility,
        metrics={"slots": float(len(result.slots)), "converged": float(result.converged)},
        trace_header=SLOT_TRACE_HEADER,
        trace_rows=rows,
        power_trace_rows=[] if result.stage_one is None else _power_rows(result.stage_one),
    )


def run_method(inst: NetworkInstance, method: MethodSpec, settings: SolverSettings) -> MethodRun:
    name = method.name
    p_max = max_power(inst)

    if name == "max-sinr":
        assoc = max_sinr_assoc(inst, p_max)
        return MethodRun(
            association=assoc,
            rates_bps=user_rates(inst, assoc, p_max),
            reported_utility=network_utility(inst, assoc, p_max),
        )

    if name in ("dcd", "subgradient"):
        a = utility_matrix(inst, p_max)
        if name == "dcd":
            result = dcd_solve(a, inst.num_users, settings.dcd)
            metrics = {"sweeps": float(result.sweeps), "converged": float(result.converged)}
        else:
            result = subgradient_solve(a, inst.num_users, settings.subgradient, settings.dcd)
            metrics = {"best_iteration": float(result.dual.iteration)}
        metrics["dual_objective"] = result.dual.dual_objective
        assoc = result.association
        return MethodRun(
            association=assoc,
            rates_bps=user_rates(inst, assoc, p_max),
            reported_utility=association_value(a, assoc),
            duality_gap_bound=duality_gap_bound(assoc, result.dual.mu, result.dual.nu),
            metrics=metrics,
            trace_header=DUAL_TRACE_HEADER,
            trace_rows=[
                (row.iteration, _opt(row.updated_bs), row.dual_objective, row.primal_utility)
                for row in result.trace
            ],
        )

    if name == "joint-dcd":
        return _joint_run(
            inst, iterate_assoc_power(inst, None, settings.joint, settings.dcd, settings.newton)
        )
    if name == "joint-maxsinr":
        return _joint_run(inst, iterate_maxsinr_power(inst, None, settings.joint, settings.newton))

    if name == "direct-dual":
        result = direct_dual_solve(inst, settings.direct_dual, settings.newton)
        return MethodRun(
            association=result.association,
            rates_bps=user_rates(inst, result.association, result.p),
            reported_utility=result.utility,
            duality_gap_bound=duality_gap_bound(result.association, result.dual.mu, result.dual.nu),
            metrics={
                "dual_objective": result.dual.dual_objective,
                "power_solver_calls": float(result.power_solver_calls),
            },
            trace_header=DIRECT_DUAL_TRACE_HEADER,
            trace_rows=[
                (r.iteration, _opt(r.updated_bs), r.dual_objective, r.best_primal_utility, r.power_solver_calls)
                for r in result.trace
            ],
        )
    if name == "maxsinr-optpower":
        assoc, p = maxsinr_optpower_solve(inst, settings.direct_dual, settings.newton)
        return MethodRun(
            association=assoc,
            rates_bps=user_rates(inst, assoc, p),
            reported_utility=network_utility(inst, assoc, p),
        )

    if name == "two-stage":
        return _mimo_run(
            two_stage_solve(
                inst,
                settings.two_stage,
                joint_options=settings.joint,
                dcd_options=settings.dcd,
                newton_options=settings.newton,
            )
        )
    if name == "maxsinr-wmmse":
        return _mimo_run(maxsinr_wmmse_solve(inst, settings.two_stage))

    raise ValueError(f"unknown method: {name}")


def candidate_table(
    summaries: Sequence[MethodSummary],
    methods: Sequence[MethodSpec],
    prepared: dict[str, SolverSettings],
) -> list[CandidateRow]:
    """Utility and rate percentiles of each MIMO method next to its candidate count."""

    by_label = {s.method: s for s in summaries}
    rows = []
    for method in methods:
        if method.name not in MIMO_METHODS:
            continue
        label = method.display_name
        summary = by_label[label]
        pct = summary.rate_percentiles_mbps
        rows.append(
            CandidateRow(
                method=label,
                candidates_per_bs=prepared[label].two_stage.candidates_per_bs,
                seeds=summary.seeds - summary.failed,
                utility_mean=summary.utility_mean,
                utility_median=summary.utility_median,
                rate_p5_mbps=pct.get("p5"),
                rate_p50_mbps=pct.get("p50"),
            )
        )
    return rows


def check_consistency(run: MethodRun, method: str) -> float:
    recomputed = log_utility(run.rates_bps)
    if abs(recomputed - run.reported_utility) > UTILITY_CHECK_TOL * max(1.0, abs(recomputed)):
        raise ReportConsistencyError(
            f"{method}: solver utility {run.reported_utility!r} differs from recomputed {recomputed!r}"
        )
    return recomputed


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def summarize(outcomes: Sequence[SeedOutcome], labels: Sequence[str]) -> list[MethodSummary]:
    """Per-method statistics; percentiles are taken over the pooled per-user rates."""

    summaries = []
    for label in labels:
        mine = [o for o in outcomes if o.method == label]
        ok = [o for o in mine if o.ok and o.rate_report is not None]
        summary = MethodSummary(method=label, seeds=len(mine), failed=len(mine) - len(ok))
        if ok:
            utilities = np.array([o.rate_report.utility for o in ok])
            pooled = np.concatenate([np.asarray(o.rate_report.rate_bps) for o in ok]) / MBPS
            values = np.percentile(pooled, PERCENTILES)
            macro_users = sum(o.rate_report.macro_user_fraction * len(o.rate_report.rate_bps) for o in ok)
            share = float(macro_users / pooled.size)
            summary = summary.model_copy(
                update={
                    "utility_mean": float(utilities.mean()),
                    "utility_median": float(np.median(utilities)),
                    "rate_percentiles_mbps": {f"p{q}": float(v) for q, v in zip(PERCENTILES, values)},
                    "macro_user_share": share,
                    "pico_user_share": 1.0 - share,
                }
            )
        summaries.append(summary)
    return summaries


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------


class ExperimentService:
    def __init__(self, *, config: HarnessConfig, output: Optional[OutputService] = None) -> None:
        self._config = config
        self._output = output

    @staticmethod
    def prepare(spec: ExperimentSpec) -> dict[str, SolverSettings]:
        """Validate every method's options before anything runs."""

        base = SolverSettings.from_sections(spec.solver_options)
        prepared: dict[str, SolverSettings] = {}
        for method in spec.methods:
            label = method.display_name
            if label in prepared:
                raise ValueError(f"duplicate method label: {label}")
            if method.name in MIMO_METHODS and not spec.scenario.has_mimo_channels:
                raise ValueError(f"{label} needs antennas_per_bs or antennas_per_user above 1")
            prepared[label] = settings_for(method, base)
        return prepared

    def _trace_name(self, label: str, seed: int) -> str:
        return f"trace_{label}_seed{seed}.csv"

    def _power_trace_name(self, label: str, seed: int) -> str:
        return f"power_trace_{label}_seed{seed}.csv"

    def _run_one(
        self, inst: NetworkInstance, seed: int, method: MethodSpec, settings: SolverSettings, write_traces: bool
    ) -> SeedOutcome:
        label = method.display_name
        try:
            run = run_method(inst, method, settings)
            check_consistency(run, label)
            trace_file = power_trace_file = None
            if write_traces and self._output is not None:
                if run.trace_rows:
                    trace_file = self._trace_name(label, seed)
                    self._output.write_csv(trace_file, run.trace_header, run.trace_rows)
                if run.power_trace_rows:
                    power_trace_file = self._power_trace_name(label, seed)
                    self._output.write_csv(power_trace_file, POWER_TRACE_HEADER, run.power_trace_rows)
            return SeedOutcome(
                seed=seed,
                method=label,
                rate_report=rate_report(inst, run.association, run.rates_bps),
                serving_bs=run.association.bs_of.tolist(),
                reported_utility=run.reported_utility,
                duality_gap_bound=run.duality_gap_bound,
                metrics=run.metrics,
                trace_file=trace_file,
                power_trace_file=power_trace_file,
            )
        except Exception as exc:
            logger.exception("Method %s failed on seed %d", label, seed)
            return SeedOutcome(seed=seed, method=label, error=f"{type(exc).__name__}: {exc}")

    def run_seed(
        self, spec: ExperimentSpec, seed: int, prepared: dict[str, SolverSettings]
    ) -> list[SeedOutcome]:
        """All methods on one generated instance."""

        try:
            inst = gen_topology(spec.scenario.model_copy(update={"seed": seed}))
        except Exception as exc:
            logger.exception("Topology generation failed for seed %d", seed)
            return [
                SeedOutcome(seed=seed, method=m.display_name, error=f"{type(exc).__name__}: {exc}")
                for m in spec.methods
            ]
        return [
            self._run_one(inst, seed, method, prepared[method.display_name], spec.write_traces)
            for method in spec.methods
        ]

    async def run(self, spec: ExperimentSpec) -> Report:
        prepared = self.prepare(spec)
        semaphore = asyncio.Semaphore(self._config.threads)

        async def _one(seed: int) -> list[SeedOutcome]:
            async with semaphore:
                return await asyncio.to_thread(self.run_seed, spec, seed, prepared)

        tasks = [asyncio.create_task(_one(seed)) for seed in spec.seeds]
        outcomes: list[SeedOutcome] = []
        for fut in tqdm(asyncio.as_completed(tasks), total=len(tasks), desc="Running seeds", unit="seed"):
            outcomes.extend(await fut)

        order = {m.display_name: i for i, m in enumerate(spec.methods)}
        outcomes.sort(key=lambda o: (o.seed, order[o.method]))
        labels = [m.display_name for m in spec.methods]
        summaries = summarize(outcomes, labels)
        report = Report(
            outcomes=outcomes,
            summaries=summaries,
            candidate_table=candidate_table(summaries, spec.methods, prepared),
        )
        logger.info("Experiment finished: %d runs, %d failed", len(outcomes), report.failed)
        if self._output is not None:
            self.write_report(report)
        return report

    def run_blocking(self, spec: ExperimentSpec) -> Report:
        return asyncio.run(self.run(spec))

    def write_report(self, report: Report) -> None:
        output = self._output
        if output is None:
            raise ExperimentServiceError("no output directory configured")
        output.write_csv(
            "rates.csv",
            ("seed", "method", "user", "rate_bps", "serving_bs"),
            (
                (o.seed, o.method, user, float(rate), o.serving_bs[user])
                for o in report.outcomes
                if o.ok
                for user, rate in enumerate(o.rate_report.rate_bps)
            ),
        )
        output.write_csv(
            "utility.csv",
            ("seed", "method", "utility", "reported_utility", "duality_gap_bound", "macro_user_fraction", "error"),
            (
                (
                    o.seed,
                    o.method,
                    o.rate_report.utility if o.ok else None,
                    o.reported_utility,
                    o.duality_gap_bound,
                    o.rate_report.macro_user_fraction if o.ok else None,
                    o.error,
                )
                for o in report.outcomes
            ),
        )
        output.write_text(
            "summary.json",
            report.model_dump_json(
                indent=2,
                exclude={"outcomes": {"__all__": {"rate_report": {"rate_bps", "cdf_points"}, "serving_bs": True}}},
            )
            + "\n",
        )
        if report.candidate_table:
            output.write_json(
                "mimo_summary.json",
                {"rows": [row.model_dump() for row in report.candidate_table]},
            )

    def bench(self, spec: ExperimentSpec, clock: Callable[[], float] = time.perf_counter) -> BenchReport:
        """Time every method on every seed, sequentially."""

        prepared = self.prepare(spec)
        entries: list[BenchEntry] = []
        for seed in spec.seeds:
            inst = gen_topology(spec.scenario.model_copy(update={"seed": seed}))
            for method in spec.methods:
                label = method.display_name
                start = clock()
                try:
                    run = run_method(inst, method, prepared[label])
                    entries.append(BenchEntry(method=label, seed=seed, seconds=clock() - start, utility=run.reported_utility))
                except Exception as exc:
                    logger.exception("Bench run %s failed on seed %d", label, seed)
                    entries.append(BenchEntry(method=label, seed=seed, seconds=clock() - start, error=str(exc)))
        means = {
            m.display_name: float(np.mean([e.seconds for e in entries if e.method == m.display_name]))
            for m in spec.methods
        }
        report = BenchReport(entries=entries, mean_seconds=means)
        if self._output is not None:
            self._output.write_json("bench.json", report)
        return report


def run_experiment(
    spec: ExperimentSpec,
    *,
    config: Optional[HarnessConfig] = None,
    output: Optional[OutputService] = None,
) -> Report:
    service = ExperimentService(config=config or HarnessConfig.from_env(), output=output)
    return service.run_blocking(spec)
