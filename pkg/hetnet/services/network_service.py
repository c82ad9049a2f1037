from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError

from hetnet.models.network import (
    WRAPAROUND_CLUSTERS,
    InstanceDocument,
    NetworkConfig,
    RateReport,
)
from hetnet.services.dcd_service import Association, association_value

logger = logging.getLogger(__name__)

# Lower bound on SINR inside logarithms (switched-off BSs give 0).
SINR_FLOOR = 1e-300
MBPS = 1e6


class NetworkServiceError(RuntimeError):
    pass


class InstanceFormatError(NetworkServiceError):
    pass


def dbm_to_mw(value_dbm: float) -> float:
    return 10.0 ** (value_dbm / 10.0)


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    """Immutable physical scenario.

    Arrays are stored read-only. Units: ``gain`` linear, ``max_psd`` and
    ``noise_psd`` in mW/Hz, positions in km. ``channels`` has shape
    ``(K, L, N, M)`` when present.
    """

    gain: np.ndarray
    max_psd: np.ndarray
    noise_psd: np.ndarray
    bandwidth_hz: float
    snr_gap: float = 1.0
    bs_tier: tuple[str, ...] = ()
    bs_positions: Optional[np.ndarray] = None
    user_positions: Optional[np.ndarray] = None
    antennas_per_bs: Optional[np.ndarray] = None
    antennas_per_user: Optional[np.ndarray] = None
    channels: Optional[np.ndarray] = None
    config: Optional[NetworkConfig] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        gain = np.array(self.gain, dtype=float)
        if gain.ndim != 2:
            raise ValueError("gain must be a (K, L) matrix")
        num_users, num_bs = gain.shape
        max_psd = np.array(self.max_psd, dtype=float).reshape(num_bs)
        noise_psd = np.array(self.noise_psd, dtype=float).reshape(num_users)
        if not np.all(gain > 0) or not np.all(np.isfinite(gain)):
            raise ValueError("gain entries must be finite and positive")
        if not np.all(max_psd > 0):
            raise ValueError("max_psd entries must be positive")
        if not np.all(noise_psd > 0):
            raise ValueError("noise_psd entries must be positive")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.snr_gap < 1.0:
            raise ValueError("snr_gap must be >= 1 (linear)")

        tiers = tuple(self.bs_tier) if self.bs_tier else ("macro",) * num_bs
        if len(tiers) != num_bs or any(t not in ("macro", "pico") for t in tiers):
            raise ValueError("bs_tier must list 'macro' or 'pico' for every BS")

        bs_pos = (
            np.zeros((num_bs, 2))
            if self.bs_positions is None
            else np.array(self.bs_positions, dtype=float).reshape(num_bs, 2)
        )
        user_pos = (
            np.zeros((num_users, 2))
            if self.user_positions is None
            else np.array(self.user_positions, dtype=float).reshape(num_users, 2)
        )

        channels = None
        if self.channels is not None:
            channels = np.array(self.channels, dtype=complex)
            if channels.ndim != 4 or channels.shape[:2] != (num_users, num_bs):
                raise ValueError("channels must have shape (K, L, N, M)")
        m_default = 1 if channels is None else channels.shape[3]
        n_default = 1 if channels is None else channels.shape[2]
        ant_bs = (
            np.full(num_bs, m_default, dtype=int)
            if self.antennas_per_bs is None
            else np.array(self.antennas_per_bs, dtype=int).reshape(num_bs)
        )
        ant_user = (
            np.full(num_users, n_default, dtype=int)
            if self.antennas_per_user is None
            else np.array(self.antennas_per_user, dtype=int).reshape(num_users)
        )
        if np.any(ant_bs < 1) or np.any(ant_user < 1):
            raise ValueError("antenna counts must be >= 1")

        for name, value in (
            ("gain", gain),
            ("max_psd", max_psd),
            ("noise_psd", noise_psd),
            ("bs_positions", bs_pos),
            ("user_positions", user_pos),
            ("antennas_per_bs", ant_bs),
            ("antennas_per_user", ant_user),
            ("channels", channels),
        ):
            if value is not None:
                value.flags.writeable = False
            object.__setattr__(self, name, value)
        object.__setattr__(self, "bs_tier", tiers)
        object.__setattr__(self, "bandwidth_hz", float(self.bandwidth_hz))
        object.__setattr__(self, "snr_gap", float(self.snr_gap))

    @property
    def num_users(self) -> int:
        return self.gain.shape[0]

    @property
    def num_bs(self) -> int:
        return self.gain.shape[1]

    @property
    def is_macro(self) -> np.ndarray:
        return np.array([t == "macro" for t in self.bs_tier])

    @property
    def has_channels(self) -> bool:
        return self.channels is not None


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


def pathloss_db(distance_km: float | np.ndarray) -> float | np.ndarray:
    """Distance-dependent attenuation 128.1 + 37.6 log10(d), d in km."""

    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    loss = 128.1 + 37.6 * np.log10(d)
    return float(loss) if loss.ndim == 0 else loss


def _lattice_basis(isd_km: float) -> np.ndarray:
    return isd_km * np.array([[1.0, 0.0], [0.5, math.sqrt(3.0) / 2.0]])


def hex_cell_centers(num_cells: int, isd_km: float) -> np.ndarray:
    """Cell centers ordered by ring, then counter-clockwise from the x axis."""

    rings = 0
    while 1 + 3 * rings * (rings + 1) < num_cells:
        rings += 1
    basis = _lattice_basis(isd_km)
    cells = []
    for a in range(-rings, rings + 1):
        for b in range(-rings, rings + 1):
            ring = max(abs(a), abs(b), abs(a + b))
            if ring > rings:
                continue
            xy = a * basis[0] + b * basis[1]
            angle = math.atan2(xy[1], xy[0]) % (2 * math.pi)
            cells.append((ring, round(angle, 9), xy))
    cells.sort(key=lambda c: (c[0], c[1]))
    return np.array([c[2] for c in cells[:num_cells]])


def wraparound_lattice(num_cells: int, isd_km: float) -> np.ndarray:
    """Rows are the two translation vectors of the repeating cell cluster."""

    shift = WRAPAROUND_CLUSTERS.get(num_cells)
    if shift is None:
        raise ValueError(f"no wrap-around cluster for {num_cells} cells")
    basis = _lattice_basis(isd_km)
    i, j = shift
    u1 = i * basis[0] + j * basis[1]
    # 60 degree rotation in lattice coordinates: (a, b) -> (-b, a + b)
    u2 = -j * basis[0] + (i + j) * basis[1]
    return np.vstack([u1, u2])


def pairwise_distances(
    points_a: np.ndarray, points_b: np.ndarray, lattice: Optional[np.ndarray] = None
) -> np.ndarray:
    """Distances between two point sets, toroidal when a lattice is given."""

    diff = points_a[:, None, :] - points_b[None, :, :]
    if lattice is None:
        return np.linalg.norm(diff, axis=-1)
    coords = diff @ np.linalg.inv(lattice)
    coords -= np.round(coords)
    best = np.full(diff.shape[:2], np.inf)
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            shifted = (coords + np.array([s1, s2])) @ lattice
            best = np.minimum(best, np.linalg.norm(shifted, axis=-1))
    return best


def _inside_hexagon(offset: np.ndarray, isd_km: float) -> bool:
    for deg in (0.0, 60.0, 120.0):
        rad = math.radians(deg)
        if abs(offset[0] * math.cos(rad) + offset[1] * math.sin(rad)) > isd_km / 2:
            return False
    return True


def gen_topology(config: NetworkConfig) -> NetworkInstance:
    """Drop BSs and users for ``config`` and build the channel gains.

    Deterministic for a fixed seed. Fast fading uses an independent stream so the
    large-scale quantities do not depend on the antenna counts.
    """

    topo_seq, fading_seq = np.random.SeedSequence(config.seed).spawn(2)
    rng = np.random.default_rng(topo_seq)
    isd = config.inter_site_distance_km
    radius = isd / math.sqrt(3.0)

    centers = hex_cell_centers(config.num_cells, isd)
    lattice = wraparound_lattice(config.num_cells, isd) if config.wraparound else None

    bs_positions: list[np.ndarray] = []
    bs_tier: list[str] = []
    for center, picos in zip(centers, config.picos_by_cell):
        for _ in range(config.macros_per_cell):
            bs_positions.append(center.copy())
            bs_tier.append("macro")
        for k in range(picos):
            angle = math.radians(30.0 + 360.0 * k / picos)
            r = config.pico_radius_fraction * radius
            bs_positions.append(center + r * np.array([math.cos(angle), math.sin(angle)]))
            bs_tier.append("pico")
    bs_xy = np.array(bs_positions)

    user_positions: list[np.ndarray] = []
    resampled = 0
    for center in centers:
        for _ in range(config.users_per_cell):
            while True:
                offset = rng.uniform(-radius, radius, size=2)
                if not _inside_hexagon(offset, isd):
                    continue
                candidate = center + offset
                dist = pairwise_distances(candidate[None, :], bs_xy, lattice)
                if dist.min() >= config.min_distance_km:
                    break
                resampled += 1
            user_positions.append(candidate)
    user_xy = np.array(user_positions)
    if resampled:
        logger.debug("Re-dropped %d users too close to a BS", resampled)

    distances = pairwise_distances(user_xy, bs_xy, lattice)
    shadowing = rng.normal(0.0, config.shadowing_sigma_db, size=distances.shape)
    gain_db = config.antenna_gain_dbi - pathloss_db(distances) - shadowing
    gain = 10.0 ** (gain_db / 10.0)

    num_users, num_bs = gain.shape
    max_psd = np.array(
        [
            dbm_to_mw(
                config.macro_max_psd_dbm_hz if tier == "macro" else config.pico_max_psd_dbm_hz
            )
            for tier in bs_tier
        ]
    )
    noise = np.full(num_users, dbm_to_mw(config.noise_psd_dbm_hz))

    channels = None
    if config.has_mimo_channels:
        fading = np.random.default_rng(fading_seq)
        shape = (num_users, num_bs, config.antennas_per_user, config.antennas_per_bs)
        cn = (fading.standard_normal(shape) + 1j * fading.standard_normal(shape)) / math.sqrt(2.0)
        channels = cn * np.sqrt(gain)[:, :, None, None]

    logger.debug(
        "Generated topology seed=%d: K=%d users, L=%d BSs", config.seed, num_users, num_bs
    )
    return NetworkInstance(
        gain=gain,
        max_psd=max_psd,
        noise_psd=noise,
        bandwidth_hz=config.bandwidth_hz,
        snr_gap=config.snr_gap,
        bs_tier=tuple(bs_tier),
        bs_positions=bs_xy,
        user_positions=user_xy,
        antennas_per_bs=np.full(num_bs, config.antennas_per_bs),
        antennas_per_user=np.full(num_users, config.antennas_per_user),
        channels=channels,
        config=config,
    )


# ---------------------------------------------------------------------------
# SINR, rates and utilities
# ---------------------------------------------------------------------------


def max_power(inst: NetworkInstance) -> np.ndarray:
    return np.array(inst.max_psd, copy=True)


def sinr(inst: NetworkInstance, i: int, j: int, p: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    others = np.arange(inst.num_bs) != j
    interference = float(np.dot(inst.gain[i, others], p[others]))
    return float(inst.gain[i, j] * p[j] / (interference + inst.noise_psd[i]))


def sinr_matrix(inst: NetworkInstance, p: np.ndarray) -> np.ndarray:
    """SINR of every user toward every BS, shape (K, L)."""

    p = np.asarray(p, dtype=float)
    received = inst.gain * p[None, :]
    num_bs = inst.num_bs
    interference = received @ (np.ones((num_bs, num_bs)) - np.eye(num_bs))
    return received / (interference + inst.noise_psd[:, None])


def spectral_efficiency(inst: NetworkInstance, sinr_values: np.ndarray) -> np.ndarray:
    """log2(1 + SINR / Gamma); the only place the rate log base is chosen."""

    return np.log1p(np.maximum(sinr_values, SINR_FLOOR) / inst.snr_gap) / math.log(2.0)


def rate_siso(inst: NetworkInstance, i: int, j: int, p: np.ndarray, k_j: int) -> float:
    if k_j < 1:
        raise ValueError("k_j must be >= 1")
    se = spectral_efficiency(inst, np.array(sinr(inst, i, j, p)))
    return float(inst.bandwidth_hz / k_j * se)


def bandwidth_scale(inst: NetworkInstance, antenna_scaling: bool) -> np.ndarray:
    if antenna_scaling:
        return inst.antennas_per_bs.astype(float)
    return np.ones(inst.num_bs)


def utility_matrix(
    inst: NetworkInstance, p: np.ndarray, antenna_scaling: bool = False
) -> np.ndarray:
    """a_ij = ln(c_j W log2(1 + SINR_ij / Gamma)) with the rate in Mbps."""

    se = spectral_efficiency(inst, sinr_matrix(inst, p))
    full_rate_mbps = bandwidth_scale(inst, antenna_scaling)[None, :] * inst.bandwidth_hz * se / MBPS
    return np.log(full_rate_mbps)


def network_utility(
    inst: NetworkInstance,
    assoc: Association,
    p: np.ndarray,
    antenna_scaling: bool = False,
) -> float:
    """Sum_i a_{i,b(i)} - Sum_j k_j ln k_j at powers p."""

    return association_value(utility_matrix(inst, p, antenna_scaling), assoc)


def user_rates(
    inst: NetworkInstance,
    assoc: Association,
    p: np.ndarray,
    antenna_scaling: bool = False,
) -> np.ndarray:
    """Per-user rate in bits/s under equal time sharing within each cell."""

    users = np.arange(inst.num_users)
    sinr_served = sinr_matrix(inst, p)[users, assoc.bs_of]
    se = spectral_efficiency(inst, sinr_served)
    scale = bandwidth_scale(inst, antenna_scaling)[assoc.bs_of]
    return scale * inst.bandwidth_hz * se / assoc.k[assoc.bs_of]


def log_utility(rates_bps: np.ndarray) -> float:
    return float(np.sum(np.log(np.asarray(rates_bps) / MBPS)))


def rate_report(
    inst: NetworkInstance, assoc: Association, rates_bps: Sequence[float]
) -> RateReport:
    rates = np.asarray(rates_bps, dtype=float)
    macro_mask = inst.is_macro[assoc.bs_of]
    macro_fraction = float(macro_mask.mean())
    return RateReport(
        rate_bps=rates.tolist(),
        utility=log_utility(rates),
        load=assoc.k.astype(int).tolist(),
        macro_user_fraction=macro_fraction,
        pico_user_fraction=1.0 - macro_fraction,
        cdf_points=np.sort(rates).tolist(),
    )


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------


def to_document(inst: NetworkInstance) -> InstanceDocument:
    channels_real = channels_imag = None
    if inst.channels is not None:
        channels_real = inst.channels.real.tolist()
        channels_imag = inst.channels.imag.tolist()
    return InstanceDocument(
        num_users=inst.num_users,
        num_bs=inst.num_bs,
        gain=inst.gain.tolist(),
        max_psd=inst.max_psd.tolist(),
        noise_psd=inst.noise_psd.tolist(),
        bandwidth_hz=inst.bandwidth_hz,
        snr_gap=inst.snr_gap,
        bs_tier=list(inst.bs_tier),
        bs_positions=[tuple(xy) for xy in inst.bs_positions.tolist()],
        user_positions=[tuple(xy) for xy in inst.user_positions.tolist()],
        antennas_per_bs=inst.antennas_per_bs.tolist(),
        antennas_per_user=inst.antennas_per_user.tolist(),
        channels_real=channels_real,
        channels_imag=channels_imag,
        config=inst.config,
    )


def from_document(doc: InstanceDocument) -> NetworkInstance:
    channels = None
    if (doc.channels_real is None) != (doc.channels_imag is None):
        raise InstanceFormatError("channels_real and channels_imag must come together")
    if doc.channels_real is not None:
        channels = np.array(doc.channels_real) + 1j * np.array(doc.channels_imag)
    try:
        return NetworkInstance(
            gain=np.array(doc.gain),
            max_psd=np.array(doc.max_psd),
            noise_psd=np.array(doc.noise_psd),
            bandwidth_hz=doc.bandwidth_hz,
            snr_gap=doc.snr_gap,
            bs_tier=tuple(doc.bs_tier),
            bs_positions=np.array(doc.bs_positions),
            user_positions=np.array(doc.user_positions),
            antennas_per_bs=np.array(doc.antennas_per_bs),
            antennas_per_user=np.array(doc.antennas_per_user),
            channels=channels,
            config=doc.config,
        )
    except ValueError as exc:
        raise InstanceFormatError(f"Invalid instance document: {exc}") from exc


def dump_instance(inst: NetworkInstance) -> str:
    return to_document(inst).model_dump_json()


def load_instance(path: Path) -> NetworkInstance:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        doc = InstanceDocument.model_validate(payload)
    except (OSError, json.JSONDecodeError, ValidationError) as exc:
        logger.exception("Failed to read instance document %s", path)
        raise InstanceFormatError(f"Unreadable instance document: {path}") from exc
    return from_document(doc)
