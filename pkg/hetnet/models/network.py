from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Cluster sizes that tile the hexagonal lattice, mapped to the (i, j) shift
# parameters of their wrap-around super-lattice.
WRAPAROUND_CLUSTERS: dict[int, tuple[int, int]] = {
    1: (1, 0),
    3: (1, 1),
    7: (2, 1),
    19: (3, 2),
}


class NetworkConfig(BaseModel):
    """Scenario parameters for a heterogeneous network drop.

    Defaults: 10 MHz, 0 dB SNR gap,
    -169 dBm/Hz noise, -27/-47 dBm/Hz macro/pico PSD limits, 15 dBi antenna gain,
    8 dB log-normal shadowing and a 7-cell wrap-around layout.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_cells: int = Field(7, ge=1)
    macros_per_cell: int = Field(1, ge=1)
    picos_per_cell: int = Field(3, ge=1)
    pico_counts: Optional[tuple[int, ...]] = Field(
        None,
        description="Pico BSs in each cell, e.g. 2,1,1; overrides picos_per_cell",
    )
    users_per_cell: int = Field(30, ge=1)
    inter_site_distance_km: float = Field(0.5, gt=0)
    bandwidth_hz: float = Field(10e6, gt=0)
    snr_gap: float = Field(1.0, ge=1.0, description="SNR gap Gamma, linear")
    noise_psd_dbm_hz: float = -169.0
    macro_max_psd_dbm_hz: float = -27.0
    pico_max_psd_dbm_hz: float = -47.0
    antenna_gain_dbi: float = 15.0
    shadowing_sigma_db: float = Field(8.0, ge=0)
    wraparound: bool = True
    seed: int = Field(0, ge=0, lt=2**64)
    antennas_per_bs: int = Field(1, ge=1)
    antennas_per_user: int = Field(1, ge=1)
    fast_fading: bool = Field(
        False, description="Draw MIMO channels even when all antenna counts are 1"
    )
    pico_radius_fraction: float = Field(2.0 / 3.0, gt=0, lt=1)
    min_distance_km: float = Field(
        0.01, gt=0, description="Users closer than this to any BS are re-dropped"
    )

    @field_validator("pico_counts", mode="before")
    @classmethod
    def _split_pico_counts(cls, value):
        if isinstance(value, str):
            return tuple(int(item) for item in value.split(",") if item.strip())
        return value

    @model_validator(mode="after")
    def _check_pico_counts(self) -> "NetworkConfig":
        if self.pico_counts is not None:
            if len(self.pico_counts) != self.num_cells:
                raise ValueError(
                    f"pico_counts needs one entry per cell ({self.num_cells}), got {len(self.pico_counts)}"
                )
            if min(self.pico_counts) < 0:
                raise ValueError("pico_counts entries must be >= 0")
        return self

    @model_validator(mode="after")
    def _check_wraparound(self) -> "NetworkConfig":
        if self.wraparound and self.num_cells not in WRAPAROUND_CLUSTERS:
            supported = ", ".join(str(n) for n in sorted(WRAPAROUND_CLUSTERS))
            raise ValueError(
                f"wraparound requires num_cells in {{{supported}}}, got {self.num_cells}"
            )
        return self

    @property
    def num_bs(self) -> int:
        return self.num_cells * self.macros_per_cell + sum(self.picos_by_cell)

    @property
    def picos_by_cell(self) -> tuple[int, ...]:
        if self.pico_counts is not None:
            return self.pico_counts
        return (self.picos_per_cell,) * self.num_cells

    @property
    def num_users(self) -> int:
        return self.num_cells * self.users_per_cell

    @property
    def has_mimo_channels(self) -> bool:
        return self.fast_fading or self.antennas_per_bs * self.antennas_per_user > 1


class InstanceDocument(BaseModel):
    """Versioned JSON form of a network instance; gains are linear, full precision."""

    model_config = ConfigDict(extra="forbid")

    version: Literal[1] = 1
    num_users: int = Field(..., ge=1)
    num_bs: int = Field(..., ge=1)
    gain: list[list[float]]
    max_psd: list[float]
    noise_psd: list[float]
    bandwidth_hz: float = Field(..., gt=0)
    snr_gap: float = Field(..., ge=1.0)
    bs_tier: list[Literal["macro", "pico"]]
    bs_positions: list[tuple[float, float]]
    user_positions: list[tuple[float, float]]
    antennas_per_bs: list[int]
    antennas_per_user: list[int]
    channels_real: Optional[list[list[list[list[float]]]]] = None
    channels_imag: Optional[list[list[list[list[float]]]]] = None
    config: Optional[NetworkConfig] = None


class RateReport(BaseModel):
    rate_bps: list[float]
    utility: float = Field(..., description="Sum of natural logs of rates in Mbps")
    load: list[int]
    macro_user_fraction: float
    pico_user_fraction: float
    cdf_points: list[float] = Field(..., description="Sorted per-user rates, bits/s")
