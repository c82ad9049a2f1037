from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from hetnet.models.network import NetworkConfig, RateReport

MethodName = Literal[
    "max-sinr",
    "dcd",
    "subgradient",
    "joint-dcd",
    "joint-maxsinr",
    "direct-dual",
    "maxsinr-optpower",
    "two-stage",
    "maxsinr-wmmse",
]


class MethodSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: MethodName
    label: Optional[str] = Field(
        None, description="Display name, e.g. subgradient-2; defaults to the method name"
    )
    options: dict[str, Any] = Field(
        default_factory=dict,
        description="Overrides for the method's solver options",
    )

    @property
    def display_name(self) -> str:
        return self.label or self.name


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scenario: NetworkConfig = Field(default_factory=NetworkConfig)
    methods: list[MethodSpec] = Field(..., min_length=1)
    seeds: list[int] = Field(..., min_length=1)
    outputs: Optional[Path] = None
    write_traces: bool = False
    solver_options: dict[str, dict[str, Any]] = Field(
        default_factory=dict,
        description="Per-section solver defaults (dcd, newton, joint, ...)",
    )


class SeedOutcome(BaseModel):
    seed: int
    method: str
    rate_report: Optional[RateReport] = None
    serving_bs: list[int] = Field(default_factory=list)
    reported_utility: Optional[float] = None
    duality_gap_bound: Optional[float] = None
    metrics: dict[str, float] = Field(default_factory=dict)
    trace_file: Optional[str] = None
    power_trace_file: Optional[str] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class MethodSummary(BaseModel):
    method: str
    seeds: int
    failed: int
    utility_mean: Optional[float] = None
    utility_median: Optional[float] = None
    rate_percentiles_mbps: dict[str, float] = Field(default_factory=dict)
    macro_user_share: Optional[float] = None
    pico_user_share: Optional[float] = None


class CandidateRow(BaseModel):
    """Two-stage comparison row: one MIMO method at one candidate count."""

    method: str
    candidates_per_bs: Optional[int] = Field(
        None, description="Candidates per BS and slot; None means every associated user"
    )
    seeds: int
    utility_mean: Optional[float] = None
    utility_median: Optional[float] = None
    rate_p5_mbps: Optional[float] = None
    rate_p50_mbps: Optional[float] = None


class Report(BaseModel):
    outcomes: list[SeedOutcome]
    summaries: list[MethodSummary]
    candidate_table: list[CandidateRow] = Field(default_factory=list)

    @property
    def failed(self) -> int:
        return sum(1 for o in self.outcomes if not o.ok)


class BenchEntry(BaseModel):
    method: str
    seed: int
    seconds: float = Field(..., ge=0, description="Wall-clock time of the solve")
    utility: Optional[float] = None
    error: Optional[str] = None


class BenchReport(BaseModel):
    entries: list[BenchEntry]
    mean_seconds: dict[str, float] = Field(default_factory=dict)
