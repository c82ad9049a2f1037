from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import logsumexp, xlogy

logger = logging.getLogger(__name__)

UpdateOrder = Literal["round-robin", "random-permutation", "arbitrary-sequence"]

# Scores within this distance of a user's best score count as a tie.
TIE_TOLERANCE = 1e-9
_MAX_EXHAUSTIVE_COMBINATIONS = 1 << 20


@dataclass(frozen=True, eq=False)
class Association:
    """User-to-BS assignment in compact form: ``bs_of[i]`` and loads ``k[j]``."""

    bs_of: np.ndarray
    k: np.ndarray

    @staticmethod
    def from_assignment(bs_of: Sequence[int] | np.ndarray, num_bs: int) -> "Association":
        assignment = np.asarray(bs_of, dtype=int)
        if assignment.ndim != 1:
            raise ValueError("assignment must be one BS index per user")
        if assignment.size and (assignment.min() < 0 or assignment.max() >= num_bs):
            raise ValueError("assignment refers to a BS outside 0..L-1")
        loads = np.bincount(assignment, minlength=num_bs)
        assignment.flags.writeable = False
        loads.flags.writeable = False
        return Association(bs_of=assignment, k=loads)

    @property
    def num_users(self) -> int:
        return int(self.bs_of.size)

    @property
    def num_bs(self) -> int:
        return int(self.k.size)

    def same_as(self, other: "Association") -> bool:
        return bool(np.array_equal(self.bs_of, other.bs_of))


@dataclass
class DualState:
    mu: np.ndarray
    nu: float
    dual_objective: float
    iteration: int = 0

    @property
    def target_loads(self) -> np.ndarray:
        """e^{mu_j - nu - 1}: the load each price asks for."""
        return np.exp(self.mu - self.nu - 1.0)


@dataclass(frozen=True)
class DcdOptions:
    update_order: UpdateOrder = "round-robin"
    convergence_tol: float = 1e-6
    max_sweeps: int = 200
    tie_break_exhaustive_limit: int = 12
    sequence: tuple[int, ...] = ()
    refresh_nu_every_update: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.tie_break_exhaustive_limit < 0:
            raise ValueError("tie_break_exhaustive_limit must be >= 0")
        if self.update_order not in ("round-robin", "random-permutation", "arbitrary-sequence"):
            raise ValueError(f"unknown update_order: {self.update_order}")
        if self.update_order == "arbitrary-sequence" and not self.sequence:
            raise ValueError("arbitrary-sequence order needs a non-empty sequence")
        object.__setattr__(self, "sequence", tuple(int(j) for j in self.sequence))


@dataclass(frozen=True)
class DcdTraceRow:
    iteration: int
    updated_bs: Optional[int]
    dual_objective: float
    primal_utility: float


@dataclass
class DcdResult:
    association: Association
    dual: DualState
    trace: list[DcdTraceRow] = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False


# ---------------------------------------------------------------------------
# Closed-form dual
# ---------------------------------------------------------------------------


def dual_objective(a: np.ndarray, mu: np.ndarray, nu: float, num_users: int) -> float:
    """g(mu, nu) = sum_i max_j (a_ij - mu_j) + sum_j e^{mu_j - nu - 1} + nu K."""

    best = np.max(a - mu[None, :], axis=1).sum()
    return float(best + np.exp(mu - nu - 1.0).sum() + nu * num_users)


def update_nu(mu: np.ndarray, num_users: int) -> float:
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    return float(logsumexp(np.asarray(mu) - 1.0) - math.log(num_users))


def update_mu_j(a: np.ndarray, mu: np.ndarray, nu: float, j: int) -> float:
    """Exact minimizer of g over mu_j with every other price held fixed.

    With breakpoints beta_i = a_ij - max_{j' != j}(a_ij' - mu_j') sorted in
    descending order, f1 equals m on the m-th segment and f2 <= m holds up to
    nu + 1 + ln m, so the supremum is max_m min(beta_(m), nu + 1 + ln m).
    """

    num_users, num_bs = a.shape
    if num_bs == 1:
        competing = np.full(num_users, -np.inf)
    else:
        others = np.delete(a - mu[None, :], j, axis=1)
        competing = others.max(axis=1)
    breakpoints = np.sort(a[:, j] - competing)[::-1]
    crossings = nu + 1.0 + np.log(np.arange(1, num_users + 1))
    return float(np.max(np.minimum(breakpoints, crossings)))


def argmax_association(a: np.ndarray, mu: np.ndarray) -> Association:
    """Each user picks argmax_j (a_ij - mu_j); ties go to the lowest BS index."""

    return Association.from_assignment(np.argmax(a - mu[None, :], axis=1), a.shape[1])


def association_value(a: np.ndarray, assoc: Association) -> float:
    served = a[np.arange(a.shape[0]), assoc.bs_of].sum()
    return float(served - xlogy(assoc.k, assoc.k).sum())


# ---------------------------------------------------------------------------
# Primal recovery and certificate
# ---------------------------------------------------------------------------


def _gap_terms(loads: np.ndarray, log_targets: np.ndarray) -> float:
    return float(np.sum(xlogy(loads, loads) - loads * log_targets))


def recover_association(
    a: np.ndarray, mu: np.ndarray, nu: float, options: Optional[DcdOptions] = None
) -> Association:
    """Price-argmax assignment with ties resolved so loads track e^{mu_j - nu - 1}."""

    options = options or DcdOptions()
    num_users, num_bs = a.shape
    scores = a - mu[None, :]
    best = scores.max(axis=1, keepdims=True)
    tied_mask = scores >= best - TIE_TOLERANCE
    bs_of = np.argmax(scores, axis=1)

    tied_users = np.flatnonzero(tied_mask.sum(axis=1) > 1)
    if tied_users.size == 0:
        return Association.from_assignment(bs_of, num_bs)

    log_targets = mu - nu - 1.0
    fixed = np.ones(num_users, dtype=bool)
    fixed[tied_users] = False
    base_loads = np.bincount(bs_of[fixed], minlength=num_bs).astype(float)
    options_per_user = [np.flatnonzero(tied_mask[i]) for i in tied_users]
    combinations = math.prod(len(o) for o in options_per_user)

    if (
        tied_users.size <= options.tie_break_exhaustive_limit
        and combinations <= _MAX_EXHAUSTIVE_COMBINATIONS
    ):
        best_choice: Optional[tuple[int, ...]] = None
        best_gap = math.inf
        for choice in itertools.product(*options_per_user):
            loads = base_loads + np.bincount(choice, minlength=num_bs)
            gap = _gap_terms(loads, log_targets)
            if gap < best_gap - 1e-12:
                best_gap = gap
                best_choice = choice
        bs_of[tied_users] = best_choice
    else:
        logger.debug(
            "Greedy tie-break for %d tied users (%d combinations)",
            tied_users.size,
            combinations,
        )
        loads = base_loads.copy()
        for user, candidates in zip(tied_users, options_per_user):
            increments = [
                _gap_terms(loads[[j]] + 1.0, log_targets[[j]])
                - _gap_terms(loads[[j]], log_targets[[j]])
                for j in candidates
            ]
            choice = int(candidates[int(np.argmin(increments))])
            bs_of[user] = choice
            loads[choice] += 1.0

    return Association.from_assignment(bs_of, num_bs)


def duality_gap_bound(assoc: Association, mu: np.ndarray, nu: float) -> float:
    """Sum_j k_j ln(k_j / e^{mu_j - nu - 1}) with 0 ln(.) = 0."""

    loads = assoc.k.astype(float)
    return _gap_terms(loads, np.asarray(mu) - nu - 1.0)


# ---------------------------------------------------------------------------
# Algorithm
# ---------------------------------------------------------------------------


def _sweep_orders(options: DcdOptions, num_bs: int):
    rng = np.random.default_rng(options.seed)
    while True:
        if options.update_order == "round-robin":
            yield list(range(num_bs))
        elif options.update_order == "random-permutation":
            yield rng.permutation(num_bs).tolist()
        else:
            yield list(options.sequence)


def dcd_solve(a: np.ndarray, num_users: int, options: Optional[DcdOptions] = None) -> DcdResult:
    """Dual coordinate descent on the closed-form dual.

    Starts from mu = 0 with nu from its closed form, sweeps exact price updates
    in the configured order and stops once a sweep lowers the dual objective by
    less than ``convergence_tol``. Every coordinate update is traced.
    """

    options = options or DcdOptions()
    a = np.asarray(a, dtype=float)
    if a.shape[0] != num_users:
        raise ValueError("utility matrix must have one row per user")
    num_bs = a.shape[1]
    if options.update_order == "arbitrary-sequence":
        if min(options.sequence) < 0 or max(options.sequence) >= num_bs:
            raise ValueError("update sequence refers to a BS outside 0..L-1")

    mu = np.zeros(num_bs)
    nu = update_nu(mu, num_users)
    g = dual_objective(a, mu, nu, num_users)
    trace = [DcdTraceRow(0, None, g, association_value(a, argmax_association(a, mu)))]

    iteration = 0
    sweeps = 0
    converged = False
    orders = _sweep_orders(options, num_bs)
    while sweeps < options.max_sweeps:
        g_start = g
        for j in next(orders):
            mu[j] = update_mu_j(a, mu, nu, j)
            iteration += 1
            g = dual_objective(a, mu, nu, num_users)
            trace.append(DcdTraceRow(iteration, j, g, association_value(a, argmax_association(a, mu))))
            if options.refresh_nu_every_update:
                nu = update_nu(mu, num_users)
                g = dual_objective(a, mu, nu, num_users)
                trace.append(DcdTraceRow(iteration, None, g, trace[-1].primal_utility))
        if not options.refresh_nu_every_update:
            nu = update_nu(mu, num_users)
            g = dual_objective(a, mu, nu, num_users)
            trace.append(DcdTraceRow(iteration, None, g, trace[-1].primal_utility))
        sweeps += 1
        logger.debug("DCD sweep %d: dual objective %.9f", sweeps, g)
        if g_start - g < options.convergence_tol:
            converged = True
            break

    if not converged:
        logger.warning("DCD stopped after %d sweeps without meeting the tolerance", sweeps)

    assoc = recover_association(a, mu, nu, options)
    dual = DualState(mu=mu.copy(), nu=nu, dual_objective=g, iteration=iteration)
    logger.debug(
        "DCD finished: sweeps=%d dual=%.6f gap_bound=%.6f",
        sweeps,
        g,
        duality_gap_bound(assoc, mu, nu),
    )
    return DcdResult(association=assoc, dual=dual, trace=trace, sweeps=sweeps, converged=converged)
