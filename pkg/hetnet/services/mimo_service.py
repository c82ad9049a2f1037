from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from hetnet.services.baseline_service import max_sinr_assoc
from hetnet.services.dcd_service import Association, DcdOptions
from hetnet.services.joint_service import JointOptions, JointResult, iterate_assoc_power
from hetnet.services.network_service import (
    MBPS,
    NetworkInstance,
    max_power,
    user_rates,
    utility_matrix,
)
from hetnet.services.power_service import NewtonOptions

logger = logging.getLogger(__name__)

_LN2 = math.log(2.0)


class MimoServiceError(RuntimeError):
    pass


class MissingChannelsError(MimoServiceError):
    pass


@dataclass(frozen=True)
class WmmseOptions:
    max_iters: int = 100
    rel_tol: float = 1e-6
    multiplier_rtol: float = 1e-13

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rel_tol <= 0 or self.multiplier_rtol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class TwoStageOptions:
    """Stage-two scheduling settings.

    ``candidates_per_bs=None`` makes every associated user a candidate in every
    slot. Average rates follow an exponential moving average with weight
    ``ema_weight``; stage two stops once no user's average moved by more than
    ``rate_tol`` (relative) over the last ``window`` slots.
    """

    candidates_per_bs: Optional[int] = 8
    ema_weight: float = 0.1
    rate_tol: float = 1e-3
    window: int = 10
    min_slots: int = 10
    max_slots: int = 200
    wmmse: WmmseOptions = field(default_factory=WmmseOptions)

    def __post_init__(self) -> None:
        if self.candidates_per_bs is not None and self.candidates_per_bs < 1:
            raise ValueError("candidates_per_bs must be >= 1 or None")
        if not 0 < self.ema_weight <= 1:
            raise ValueError("ema_weight must lie in (0, 1]")
        if self.rate_tol <= 0:
            raise ValueError("rate_tol must be positive")
        if self.window < 1 or self.min_slots < 1 or self.max_slots < self.min_slots:
            raise ValueError("need window >= 1 and 1 <= min_slots <= max_slots")


@dataclass(frozen=True, eq=False)
class BeamformerSet:
    """One transmit vector per user, sent from its serving BS; zero when idle."""

    v: np.ndarray
    serving: np.ndarray
    budget: np.ndarray

    @staticmethod
    def zeros(inst: NetworkInstance, serving: np.ndarray) -> "BeamformerSet":
        num_tx = int(inst.antennas_per_bs.max())
        return BeamformerSet(
            v=np.zeros((inst.num_users, num_tx), dtype=complex),
            serving=np.asarray(serving, dtype=int),
            budget=max_power(inst),
        )

    def power_per_bs(self) -> np.ndarray:
        power = np.sum(np.abs(self.v) ** 2, axis=1)
        return np.bincount(self.serving, weights=power, minlength=self.budget.size)

    def is_feasible(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.power_per_bs() <= self.budget * (1.0 + tol)))

    def with_vectors(self, users: np.ndarray, vectors: np.ndarray) -> "BeamformerSet":
        v = self.v.copy()
        v[users] = vectors
        return BeamformerSet(v=v, serving=self.serving, budget=self.budget)


@dataclass
class SchedulerState:
    omega: np.ndarray
    r_avg: np.ndarray
    S: np.ndarray
    slot: int = 0

    def refresh_weights(self) -> None:
        self.omega = 1.0 / self.r_avg


@dataclass
class CellSolution:
    beamformers: BeamformerSet
    rates_bps: np.ndarray
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


@dataclass(frozen=True)
class SlotRecord:
    slot: int
    rates_bps: np.ndarray
    scheduled: np.ndarray


@dataclass
class TwoStageResult:
    association: Association
    scheduler: SchedulerState
    slots: list[SlotRecord] = field(default_factory=list)
    beamformers: list[BeamformerSet] = field(default_factory=list)
    converged: bool = False
    stage_one: Optional[JointResult] = None

    @property
    def average_rates_bps(self) -> np.ndarray:
        return self.scheduler.r_avg * MBPS

    @property
    def utility(self) -> float:
        return float(np.sum(np.log(self.scheduler.r_avg)))


def _require_channels(inst: NetworkInstance) -> np.ndarray:
    if inst.channels is None:
        raise MissingChannelsError("instance has no MIMO channel matrices")
    return inst.channels


# ---------------------------------------------------------------------------
# Rates
# ---------------------------------------------------------------------------


def rate_mimo(inst: NetworkInstance, i: int, j: int, beamformers: BeamformerSet) -> float:
    """W log2 det(I + H v v^H H^H Q^-1) for user i served by BS j."""

    channels = _require_channels(inst)
    if beamformers.serving[i] != j:
        raise ValueError(f"user {i} is not served by BS {j}")
    num_rx = channels.shape[2]
    received = np.einsum("knm,km->kn", channels[i, beamformers.serving], beamformers.v)
    signal = received[i]
    others = np.delete(received, i, axis=0)
    covariance = others.T @ others.conj() + inst.noise_psd[i] * np.eye(num_rx)
    _, logdet_total = np.linalg.slogdet(covariance + np.outer(signal, signal.conj()))
    _, logdet_noise = np.linalg.slogdet(covariance)
    return float(inst.bandwidth_hz * (logdet_total - logdet_noise) / _LN2)


def _sinr_rank_one(signal: np.ndarray, covariance: np.ndarray) -> np.ndarray:
    """s^H Q^-1 s for a batch of (N,) signals and (N, N) covariances."""

    solved = np.linalg.solve(covariance, signal[..., None])[..., 0]
    return np.maximum(np.real(np.sum(signal.conj() * solved, axis=-1)), 0.0)


def network_rates_mimo(inst: NetworkInstance, beamformers: BeamformerSet) -> np.ndarray:
    channels = _require_channels(inst)
    num_users, num_rx = inst.num_users, channels.shape[2]
    received = np.einsum("iknm,km->ikn", channels[:, beamformers.serving], beamformers.v)
    users = np.arange(num_users)
    signal = received[users, users]
    total = np.einsum("ikn,ikl->inl", received, received.conj())
    noise = inst.noise_psd[:, None, None] * np.eye(num_rx)[None]
    interference = total - np.einsum("in,il->inl", signal, signal.conj()) + noise
    return inst.bandwidth_hz * np.log1p(_sinr_rank_one(signal, interference)) / _LN2


# ---------------------------------------------------------------------------
# Stage one helpers
# ---------------------------------------------------------------------------


def siso_surrogate(inst: NetworkInstance, p: np.ndarray) -> np.ndarray:
    """Utility matrix of the SISO model with bandwidth scaled by M_j."""

    return utility_matrix(inst, p, antenna_scaling=True)


def select_candidates(
    assoc: Association, sched: SchedulerState, r_tilde: np.ndarray
) -> list[np.ndarray]:
    """Top ``S_j`` users of each BS by omega_i * r_tilde_i; ties go to the lower index."""

    score = sched.omega * np.asarray(r_tilde, dtype=float)
    selected = []
    for j in range(assoc.num_bs):
        members = np.flatnonzero(assoc.bs_of == j)
        order = np.lexsort((members, -score[members]))
        selected.append(members[order[: min(int(sched.S[j]), members.size)]])
    return selected


# ---------------------------------------------------------------------------
# Per-cell WMMSE
# ---------------------------------------------------------------------------


def _dominant_direction(channel: np.ndarray) -> np.ndarray:
    _, _, vh = np.linalg.svd(channel)
    return vh[0].conj()


def matched_filter_init(
    inst: NetworkInstance, bs: int, candidates: np.ndarray, budget: float
) -> np.ndarray:
    channels = _require_channels(inst)
    if candidates.size == 0:
        return np.zeros((0, channels.shape[3]), dtype=complex)
    share = math.sqrt(budget / candidates.size)
    return np.array([share * _dominant_direction(channels[c, bs]) for c in candidates])


def _transmit_filters(
    a: np.ndarray, b: np.ndarray, budget: float, rtol: float
) -> np.ndarray:
    """Minimize over V subject to sum ||v_c||^2 <= budget with v_c = (A + lambda I)^-1 b_c."""

    eigvals, eigvecs = np.linalg.eigh(a)
    eigvals = np.maximum(eigvals, 0.0)
    projected = b @ eigvecs.conj()
    weight = np.sum(np.abs(projected) ** 2, axis=0)
    floor = 1e-14 * max(float(eigvals.max()), 1e-300)
    active = weight > 1e-24 * max(float(weight.max()), 1e-300)

    def power(lam: float) -> float:
        denom = eigvals[active] + lam
        if np.any(denom <= floor):
            return math.inf
        return float(np.sum(weight[active] / denom**2))

    lam = 0.0
    if power(0.0) > budget:
        hi = max(float(eigvals.max()), 1e-300)
        while power(hi) > budget:
            hi *= 2.0
        lo = hi / 2.0
        while power(lo) <= budget:
            lo /= 2.0
        lam = brentq(lambda x: power(x) - budget, lo, hi, xtol=hi * 1e-15, rtol=rtol)

    denom = eigvals + lam
    usable = active & (denom > floor)
    coeff = np.where(usable, projected / np.where(usable, denom, 1.0), 0.0)
    vectors = coeff @ eigvecs.T
    used = float(np.sum(np.abs(vectors) ** 2))
    if used > budget:
        vectors *= math.sqrt(budget / used)
    return vectors


def _cell_terms(channels_c: np.ndarray, vectors: np.ndarray, noise_cov: np.ndarray):
    received = np.einsum("cnm,km->ckn", channels_c, vectors)
    own = np.arange(vectors.shape[0])
    signal = received[own, own]
    total = np.einsum("ckn,ckl->cnl", received, received.conj()) + noise_cov
    return signal, total


def _out_of_cell_noise(
    inst: NetworkInstance, bs: int, candidates: np.ndarray, beamformers: Optional[BeamformerSet]
) -> np.ndarray:
    channels = _require_channels(inst)
    num_rx = channels.shape[2]
    noise = inst.noise_psd[candidates, None, None] * np.eye(num_rx)[None]
    if beamformers is None:
        return noise.astype(complex)
    outside = np.flatnonzero(beamformers.serving != bs)
    received = np.einsum(
        "cknm,km->ckn",
        channels[candidates][:, beamformers.serving[outside]],
        beamformers.v[outside],
    )
    return noise + np.einsum("ckn,ckl->cnl", received, received.conj())


def wmmse_percell(
    inst: NetworkInstance,
    bs: int,
    candidates: Sequence[int] | np.ndarray,
    omega: np.ndarray,
    budget: float,
    options: Optional[WmmseOptions] = None,
    *,
    beamformers: Optional[BeamformerSet] = None,
    initial: Optional[np.ndarray] = None,
) -> CellSolution:
    """Weighted sum-rate beamforming for one BS with out-of-cell interference held fixed.

    Alternates MMSE receivers, MSE weights and transmit filters. ``omega`` holds
    one weight per candidate. Users of this BS that are not candidates get zero
    beamformers.
    """

    options = options or WmmseOptions()
    channels = _require_channels(inst)
    candidates = np.asarray(candidates, dtype=int)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != candidates.shape or np.any(omega <= 0):
        raise ValueError("omega must hold one positive weight per candidate")
    base = beamformers or BeamformerSet.zeros(inst, np.full(inst.num_users, bs))
    noise_cov = _out_of_cell_noise(inst, bs, candidates, beamformers)

    members = np.flatnonzero(base.serving == bs)
    cleared = base.with_vectors(members, np.zeros((members.size, base.v.shape[1])))
    if candidates.size == 0:
        return CellSolution(beamformers=cleared, rates_bps=np.zeros(0), converged=True)

    channels_c = channels[candidates, bs]
    vectors = (
        matched_filter_init(inst, bs, candidates, budget)
        if initial is None
        else np.array(initial, dtype=complex)
    )

    def rates_of(v: np.ndarray) -> np.ndarray:
        signal, total = _cell_terms(channels_c, v, noise_cov)
        interference = total - np.einsum("cn,cl->cnl", signal, signal.conj())
        return inst.bandwidth_hz * np.log1p(_sinr_rank_one(signal, interference)) / _LN2

    rates = rates_of(vectors)
    wsr = float(omega @ rates) / MBPS
    trace = [wsr]
    converged = False
    iteration = 0
    for iteration in range(1, options.max_iters + 1):
        signal, total = _cell_terms(channels_c, vectors, noise_cov)
        receivers = np.linalg.solve(total, signal[..., None])[..., 0]
        mse = 1.0 - np.real(np.sum(receivers.conj() * signal, axis=-1))
        mse_weight = 1.0 / np.maximum(mse, 1e-300)
        effective = np.einsum("cnm,cn->cm", channels_c.conj(), receivers)
        scale = omega * mse_weight
        quad = np.einsum("c,cm,cl->ml", scale, effective, effective.conj())
        vectors = _transmit_filters(
            quad, scale[:, None] * effective, budget, options.multiplier_rtol
        )

        rates = rates_of(vectors)
        updated = float(omega @ rates) / MBPS
        trace.append(updated)
        if abs(updated - wsr) <= options.rel_tol * max(abs(wsr), 1e-300):
            converged = True
            break
        wsr = updated

    if not converged:
        logger.warning("WMMSE at BS %d did not converge in %d iterations", bs, options.max_iters)
    return CellSolution(
        beamformers=cleared.with_vectors(candidates, vectors),
        rates_bps=rates,
        trace=trace,
        iterations=iteration,
        converged=converged,
    )


# ---------------------------------------------------------------------------
# Two-stage pipeline
# ---------------------------------------------------------------------------


def _run_slots(
    inst: NetworkInstance,
    assoc: Association,
    r_tilde_mbps: np.ndarray,
    options: TwoStageOptions,
) -> tuple[SchedulerState, list[SlotRecord], list[BeamformerSet], bool]:
    _require_channels(inst)
    if options.candidates_per_bs is not None and options.candidates_per_bs < inst.antennas_per_bs.max():
        raise ValueError("candidates_per_bs must be at least the number of BS antennas")
    if np.any(r_tilde_mbps <= 0):
        raise MimoServiceError("stage-one rate estimates must be positive")

    sizes = assoc.k if options.candidates_per_bs is None else np.full(assoc.num_bs, options.candidates_per_bs)
    sched = SchedulerState(
        omega=1.0 / r_tilde_mbps,
        r_avg=np.array(r_tilde_mbps, dtype=float),
        S=np.asarray(sizes, dtype=int),
    )
    budgets = max_power(inst)
    history = [sched.r_avg.copy()]
    slots: list[SlotRecord] = []
    sets: list[BeamformerSet] = []
    converged = False

    for slot in range(1, options.max_slots + 1):
        selected = select_candidates(assoc, sched, r_tilde_mbps)
        current = BeamformerSet.zeros(inst, assoc.bs_of)
        for j, users in enumerate(selected):
            if users.size:
                current = current.with_vectors(users, matched_filter_init(inst, j, users, budgets[j]))
        for j, users in enumerate(selected):
            solution = wmmse_percell(
                inst,
                j,
                users,
                sched.omega[users],
                float(budgets[j]),
                options.wmmse,
                beamformers=current,
            )
            current = solution.beamformers

        rates = network_rates_mimo(inst, current)
        scheduled = np.zeros(inst.num_users, dtype=bool)
        for users in selected:
            scheduled[users] = True
        slots.append(SlotRecord(slot=slot, rates_bps=rates, scheduled=scheduled))
        sets.append(current)

        sched.r_avg = (1.0 - options.ema_weight) * sched.r_avg + options.ema_weight * rates / MBPS
        sched.refresh_weights()
        sched.slot = slot
        history.append(sched.r_avg.copy())

        if slot >= max(options.min_slots, options.window):
            reference = history[-1 - options.window]
            change = np.max(np.abs(sched.r_avg - reference) / reference)
            logger.debug("Slot %d: max relative average-rate change %.3g", slot, change)
            if change < options.rate_tol:
                converged = True
                break

    if not converged:
        logger.info("Stage two stopped at the slot limit (%d) before rates settled", options.max_slots)
    return sched, slots, sets, converged


def two_stage_solve(
    inst: NetworkInstance,
    options: Optional[TwoStageOptions] = None,
    *,
    joint_options: Optional[JointOptions] = None,
    dcd_options: Optional[DcdOptions] = None,
    newton_options: Optional[NewtonOptions] = None,
) -> TwoStageResult:
    """Fix the association from the bandwidth-scaled SISO model, then schedule and beamform.

    Stage one runs the iterative DCD and power-control loop on the surrogate.
    Stage two keeps that association for every slot and runs per-cell WMMSE on
    the best candidates by proportional-fair weight.
    """

    options = options or TwoStageOptions()
    _require_channels(inst)
    stage_one = iterate_assoc_power(
        inst,
        None,
        joint_options,
        dcd_options,
        newton_options,
        antenna_scaling=True,
    )
    assoc = stage_one.association
    r_tilde = user_rates(inst, assoc, stage_one.p, antenna_scaling=True) / MBPS
    sched, slots, sets, converged = _run_slots(inst, assoc, r_tilde, options)
    result = TwoStageResult(
        association=assoc,
        scheduler=sched,
        slots=slots,
        beamformers=sets,
        converged=converged,
        stage_one=stage_one,
    )
    logger.info("Two-stage: %d slots, utility %.6f", len(slots), result.utility)
    return result


def maxsinr_wmmse_solve(
    inst: NetworkInstance, options: Optional[TwoStageOptions] = None
) -> TwoStageResult:
    """Max-SINR association at full power followed by the same stage two."""

    options = options or TwoStageOptions()
    _require_channels(inst)
    p = max_power(inst)
    assoc = max_sinr_assoc(inst, p)
    r_tilde = user_rates(inst, assoc, p, antenna_scaling=True) / MBPS
    sched, slots, sets, converged = _run_slots(inst, assoc, r_tilde, options)
    result = TwoStageResult(
        association=assoc, scheduler=sched, slots=slots, beamformers=sets, converged=converged
    )
    logger.info("Max-SINR + WMMSE: %d slots, utility %.6f", len(slots), result.utility)
    return result
