from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from hetnet.services.dcd_service import (
    Association,
    DcdOptions,
    DcdTraceRow,
    DualState,
    argmax_association,
    association_value,
    dual_objective,
    recover_association,
    update_nu,
)
from hetnet.services.network_service import NetworkInstance, sinr_matrix

logger = logging.getLogger(__name__)

StepRule = Literal["constant", "diminishing", "adaptive"]
NuRule = Literal["exact", "subgradient"]


def max_sinr_assoc(inst: NetworkInstance, p: np.ndarray) -> Association:
    """Each user picks its highest-SINR BS; ties go to the lowest index."""

    return Association.from_assignment(np.argmax(sinr_matrix(inst, p), axis=1), inst.num_bs)


@dataclass(frozen=True)
class SubgradientConfig:
    """Step-size rule and parameters of the subgradient price update.

    ``adaptive`` is the adjustable target-level rule: the level sits ``delta_t``
    below the best value so far, ``delta_t`` starts at ``delta1``, grows by
    ``rho`` when the level is reached and shrinks by ``beta`` (never below
    ``delta``) otherwise.
    """

    step_rule: StepRule = "diminishing"
    alpha0: float = 0.1
    rho: float = 1.2
    beta: float = 0.9
    delta: float = 0.002
    delta1: float = 1.0
    gamma: float = 1.0
    max_iters: int = 500
    nu_rule: NuRule = "exact"

    def __post_init__(self) -> None:
        if self.step_rule not in ("constant", "diminishing", "adaptive"):
            raise ValueError(f"unknown step_rule: {self.step_rule}")
        if self.nu_rule not in ("exact", "subgradient"):
            raise ValueError(f"unknown nu_rule: {self.nu_rule}")
        if self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.beta >= 1:
            raise ValueError("beta must be < 1")
        if self.delta <= 0 or self.delta1 <= 0:
            raise ValueError("delta and delta1 must be positive")
        if not 0 < self.gamma < 2:
            raise ValueError("gamma must lie in (0, 2)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SubgradientResult:
    association: Association
    dual: DualState
    trace: list[DcdTraceRow] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)


def price_subgradient(mu: np.ndarray, nu: float, counts: np.ndarray) -> np.ndarray:
    return np.exp(mu - nu - 1.0) - counts


def subgradient_step(
    mu: np.ndarray,
    nu: float,
    assoc_counts: np.ndarray,
    alpha_t: float,
    *,
    num_users: Optional[int] = None,
    nu_rule: NuRule = "exact",
) -> tuple[np.ndarray, float]:
    """One synchronous price step, followed by the nu refresh.

    All prices move together with the same step size. ``nu`` is then either set
    in closed form or moved along its own subgradient.
    """

    if alpha_t < 0:
        raise ValueError("alpha_t must be non-negative")
    counts = np.asarray(assoc_counts, dtype=float)
    users = int(round(counts.sum())) if num_users is None else num_users
    new_mu = mu - alpha_t * price_subgradient(mu, nu, counts)
    if nu_rule == "exact":
        new_nu = update_nu(new_mu, users)
    else:
        new_nu = nu - alpha_t * (users - np.exp(mu - nu - 1.0).sum())
    return new_mu, float(new_nu)


def subgradient_solve(
    a: np.ndarray,
    num_users: int,
    config: Optional[SubgradientConfig] = None,
    dcd_options: Optional[DcdOptions] = None,
) -> SubgradientResult:
    config = config or SubgradientConfig()
    a = np.asarray(a, dtype=float)
    num_bs = a.shape[1]

    mu = np.zeros(num_bs)
    nu = update_nu(mu, num_users)
    g = dual_objective(a, mu, nu, num_users)
    best = DualState(mu=mu.copy(), nu=nu, dual_objective=g, iteration=0)
    level_gap = config.delta1

    assoc = argmax_association(a, mu)
    trace = [DcdTraceRow(0, None, g, association_value(a, assoc))]
    best_trace = [g]

    for t in range(1, config.max_iters + 1):
        direction = price_subgradient(mu, nu, assoc.k)
        norm_sq = float(direction @ direction)
        if config.step_rule == "constant":
            alpha = config.alpha0
        elif config.step_rule == "diminishing":
            alpha = config.alpha0 / math.sqrt(t)
        else:
            if norm_sq == 0.0:
                logger.debug("Zero subgradient at iteration %d", t)
                break
            level = best.dual_objective - level_gap
            alpha = config.gamma * (g - level) / norm_sq

        mu, nu = subgradient_step(mu, nu, assoc.k, alpha, num_users=num_users, nu_rule=config.nu_rule)
        g = dual_objective(a, mu, nu, num_users)
        if config.step_rule == "adaptive":
            if g <= best.dual_objective - level_gap:
                level_gap *= config.rho
            else:
                level_gap = max(config.beta * level_gap, config.delta)
        if g < best.dual_objective:
            best = DualState(mu=mu.copy(), nu=nu, dual_objective=g, iteration=t)

        assoc = argmax_association(a, mu)
        trace.append(DcdTraceRow(t, None, g, association_value(a, assoc)))
        best_trace.append(best.dual_objective)

    recovered = recover_association(a, best.mu, best.nu, dcd_options)
    logger.debug(
        "Subgradient (%s) finished: best dual %.6f at iteration %d",
        config.step_rule,
        best.dual_objective,
        best.iteration,
    )
    return SubgradientResult(association=recovered, dual=best, trace=trace, best_trace=best_trace)
