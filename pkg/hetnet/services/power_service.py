from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hetnet.services.dcd_service import Association
from hetnet.services.network_service import (
    NetworkInstance,
    log_utility,
    max_power,
    user_rates,
)

logger = logging.getLogger(__name__)

# Backtracking gives up below this step size.
MIN_STEP = 1e-12
# |d2f/dp_j^2| below this falls back to a plain gradient step for p_j.
HESSIAN_GUARD = 1e-18


class PowerControlError(RuntimeError):
    pass


class DegeneratePowerError(PowerControlError):
    """A BS with associated users transmits at zero PSD."""


@dataclass(frozen=True)
class NewtonOptions:
    backtrack_shrink: float = 0.5
    backtrack_slope: float = 0.01
    max_outer_iters: int = 100
    grad_tol: float = 1e-6
    min_psd_floor: float = 1e-12
    objective_tol: float = 1e-10

    def __post_init__(self) -> None:
        if not 0 < self.backtrack_shrink < 1:
            raise ValueError("backtrack_shrink must lie in (0, 1)")
        if not 0 < self.backtrack_slope < 1:
            raise ValueError("backtrack_slope must lie in (0, 1)")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")
        if self.grad_tol <= 0 or self.min_psd_floor <= 0:
            raise ValueError("grad_tol and min_psd_floor must be positive")
        if self.objective_tol < 0:
            raise ValueError("objective_tol must be >= 0")


@dataclass(frozen=True)
class PowerTraceRow:
    iteration: int
    utility: float
    step_size: float
    max_projected_gradient: float


@dataclass
class PowerResult:
    p: np.ndarray
    trace: list[PowerTraceRow] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stalled: bool = False

    @property
    def utility(self) -> float:
        return self.trace[-1].utility


def _check_loaded_power(assoc: Association, p: np.ndarray) -> None:
    dark = np.flatnonzero((assoc.k > 0) & (p <= 0))
    if dark.size:
        raise DegeneratePowerError(
            f"BS {dark.tolist()} serve users at zero power; utility is -inf"
        )


def _served_terms(inst: NetworkInstance, assoc: Association, p: np.ndarray):
    """Per-user served SINR s_i, r_i = ln(1 + s_i/Gamma) and 1/((Gamma + s_i) r_i)."""

    users = np.arange(inst.num_users)
    received = inst.gain * p[None, :]
    own = received[users, assoc.bs_of]
    interference = received.sum(axis=1) - own
    s = own / (interference + inst.noise_psd)
    r = np.log1p(s / inst.snr_gap)
    phi = 1.0 / ((inst.snr_gap + s) * r)
    return own, s, r, phi


def _split_self_cross(inst: NetworkInstance, assoc: Association, per_user_self, per_user_cross):
    """Self terms summed at each user's BS, cross terms at every other BS."""

    num_bs = inst.num_bs
    self_part = np.bincount(assoc.bs_of, weights=per_user_self, minlength=num_bs)
    weighted = np.array(per_user_cross, copy=True)
    weighted[np.arange(inst.num_users), assoc.bs_of] = 0.0
    return self_part, weighted.sum(axis=0)


def power_objective(
    inst: NetworkInstance,
    assoc: Association,
    p: np.ndarray,
    antenna_scaling: bool = False,
) -> float:
    """Sum of ln(rate in Mbps) over users at PSDs p under a fixed association."""

    p = np.asarray(p, dtype=float)
    _check_loaded_power(assoc, p)
    return log_utility(user_rates(inst, assoc, p, antenna_scaling))


def power_gradient(inst: NetworkInstance, assoc: Association, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    _check_loaded_power(assoc, p)
    own, s, _, phi = _served_terms(inst, assoc, p)
    self_weights = phi * s / p[assoc.bs_of]
    cross = (phi * s**2 / own)[:, None] * inst.gain
    self_part, cross_part = _split_self_cross(inst, assoc, self_weights, cross)
    return self_part - cross_part


def power_hessian_diag(inst: NetworkInstance, assoc: Association, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    _check_loaded_power(assoc, p)
    gamma = inst.snr_gap
    own, s, r, _ = _served_terms(inst, assoc, p)
    denom = (gamma + s) ** 2 * r**2
    self_weights = -(1.0 + r) * s**2 / (denom * p[assoc.bs_of] ** 2)
    cross = (s**3 * (2.0 * r * gamma + s * (r - 1.0)) / (own**2 * denom))[:, None] * inst.gain**2
    self_part, cross_part = _split_self_cross(inst, assoc, self_weights, cross)
    return self_part + cross_part


def newton_step(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """grad / |hess| per coordinate; the sign always follows the gradient."""

    curvature = np.abs(hess)
    flat = curvature < HESSIAN_GUARD
    return np.where(flat, grad, grad / np.where(flat, 1.0, curvature))


def _projected_gradient(grad, p, lower, upper) -> np.ndarray:
    blocked = ((p >= upper) & (grad > 0)) | ((p <= lower) & (grad < 0))
    return np.where(blocked, 0.0, grad)


def newton_power_solve(
    inst: NetworkInstance,
    assoc: Association,
    p0: Optional[np.ndarray] = None,
    options: Optional[NewtonOptions] = None,
    *,
    antenna_scaling: bool = False,
) -> PowerResult:
    """Diagonal-Hessian Newton ascent on the PSDs for a fixed association.

    Each candidate ``clip(p + alpha * step)`` is tested for sufficient increase
    on the true objective; alpha halves (by default) until it passes. The
    stopping measure is the largest projected gradient component scaled by the
    BS's PSD limit.
    """

    options = options or NewtonOptions()
    upper = max_power(inst)
    lower = np.where(assoc.k > 0, np.minimum(options.min_psd_floor, upper), 0.0)
    p = upper.copy() if p0 is None else np.asarray(p0, dtype=float).copy()
    if p.shape != upper.shape:
        raise ValueError("p0 must have one entry per BS")
    if np.any(p < 0) or np.any(p > upper * (1 + 1e-12)):
        raise ValueError("p0 must satisfy 0 <= p <= max_psd")
    p = np.clip(p, lower, upper)

    f = power_objective(inst, assoc, p, antenna_scaling)
    grad = power_gradient(inst, assoc, p)
    measure = float(np.max(np.abs(_projected_gradient(grad, p, lower, upper) * upper)))
    trace = [PowerTraceRow(0, f, 0.0, measure)]
    converged = measure < options.grad_tol
    stalled = False
    iteration = 0

    while not converged and iteration < options.max_outer_iters:
        iteration += 1
        step = newton_step(grad, power_hessian_diag(inst, assoc, p))
        alpha = 1.0
        while True:
            candidate = np.clip(p + alpha * step, lower, upper)
            f_candidate = power_objective(inst, assoc, candidate, antenna_scaling)
            if f_candidate >= f + options.backtrack_slope * float(grad @ (candidate - p)):
                break
            alpha *= options.backtrack_shrink
            if alpha < MIN_STEP:
                stalled = True
                break
        if stalled:
            logger.warning("Power line search stalled at iteration %d (utility %.6f)", iteration, f)
            break

        gain_in_utility = f_candidate - f
        p, f = candidate, f_candidate
        grad = power_gradient(inst, assoc, p)
        measure = float(np.max(np.abs(_projected_gradient(grad, p, lower, upper) * upper)))
        trace.append(PowerTraceRow(iteration, f, alpha, measure))
        logger.debug("Newton iteration %d: utility %.9f alpha %.3g", iteration, f, alpha)
        if measure < options.grad_tol or gain_in_utility <= options.objective_tol:
            converged = True

    return PowerResult(p=p, trace=trace, iterations=iteration, converged=converged, stalled=stalled)
