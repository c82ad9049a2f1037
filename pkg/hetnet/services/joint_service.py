from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from hetnet.services.baseline_service import max_sinr_assoc
from hetnet.services.dcd_service import (
    Association,
    DcdOptions,
    DualState,
    argmax_association,
    dcd_solve,
    update_nu,
)
from hetnet.services.network_service import (
    NetworkInstance,
    max_power,
    network_utility,
    utility_matrix,
)
from hetnet.services.power_service import NewtonOptions, PowerTraceRow, newton_power_solve

logger = logging.getLogger(__name__)

Associate = Callable[[np.ndarray], Association]


@dataclass(frozen=True)
class JointOptions:
    max_rounds: int = 20
    utility_tol: float = 1e-6
    accept_only_improving_association: bool = True

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.utility_tol <= 0:
            raise ValueError("utility_tol must be positive")


@dataclass(frozen=True)
class DirectDualOptions:
    """Settings of the dual method for the joint association and power problem.

    ``power_call_budget`` is the number of power-solver calls a single price
    update may spend before a cost warning is logged. With
    ``seed_with_alternation`` the result of the iterative DCD and power loop
    enters the primal record before the first price update.
    """

    num_starts: int = 10
    mu_bisection_tol: float = 1e-3
    inner_alt_max: int = 5
    outer_sweeps: int = 3
    dual_tol: float = 1e-4
    bracket_width: float = 20.0
    max_bracket_expansions: int = 8
    power_call_budget: int = 1000
    seed_with_alternation: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_starts < 1:
            raise ValueError("num_starts must be >= 1")
        if self.mu_bisection_tol <= 0 or self.dual_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.inner_alt_max < 1 or self.outer_sweeps < 1:
            raise ValueError("inner_alt_max and outer_sweeps must be >= 1")
        if self.bracket_width <= 0:
            raise ValueError("bracket_width must be positive")
        if self.power_call_budget < 1:
            raise ValueError("power_call_budget must be >= 1")


@dataclass(frozen=True)
class JointRoundRow:
    round: int
    utility: float
    macro_user_fraction: float
    macro_mean_psd: float
    pico_mean_psd: float
    association_adopted: bool = True


@dataclass
class JointResult:
    association: Association
    p: np.ndarray
    trace: list[JointRoundRow] = field(default_factory=list)
    rounds: int = 0
    converged: bool = False
    power_trace: list[tuple[int, PowerTraceRow]] = field(default_factory=list)

    @property
    def utility(self) -> float:
        return self.trace[-1].utility


def _tier_mean(p: np.ndarray, mask: np.ndarray) -> float:
    return float(p[mask].mean()) if mask.any() else math.nan


def _round_row(
    inst: NetworkInstance,
    number: int,
    assoc: Association,
    p: np.ndarray,
    utility: float,
    adopted: bool = True,
) -> JointRoundRow:
    macro = inst.is_macro
    return JointRoundRow(
        round=number,
        utility=utility,
        macro_user_fraction=float(macro[assoc.bs_of].mean()),
        macro_mean_psd=_tier_mean(p, macro),
        pico_mean_psd=_tier_mean(p, ~macro),
        association_adopted=adopted,
    )


def _initial_power(inst: NetworkInstance, p0: Optional[np.ndarray]) -> np.ndarray:
    upper = max_power(inst)
    if p0 is None:
        return upper
    p = np.asarray(p0, dtype=float)
    if p.shape != upper.shape or np.any(p < 0) or np.any(p > upper * (1 + 1e-12)):
        raise ValueError("p0 must satisfy 0 <= p <= max_psd with one entry per BS")
    return np.minimum(p, upper)


def _alternate(
    inst: NetworkInstance,
    p0: Optional[np.ndarray],
    associate: Associate,
    *,
    guard: bool,
    joint_options: JointOptions,
    newton_options: Optional[NewtonOptions],
    antenna_scaling: bool,
) -> JointResult:
    p = _initial_power(inst, p0)

    def utility(assoc: Association, powers: np.ndarray) -> float:
        return network_utility(inst, assoc, powers, antenna_scaling)

    assoc = associate(p)
    current = utility(assoc, p)
    trace = [_round_row(inst, 0, assoc, p, current)]
    power_trace: list[tuple[int, PowerTraceRow]] = []
    converged = False
    rounds = 0

    for rounds in range(1, joint_options.max_rounds + 1):
        solved = newton_power_solve(inst, assoc, p, newton_options, antenna_scaling=antenna_scaling)
        p = solved.p
        power_trace.extend((rounds, row) for row in solved.trace)
        powered = utility(assoc, p)

        candidate = associate(p)
        candidate_utility = utility(candidate, p)
        adopted = not guard or candidate_utility >= powered
        if adopted:
            assoc, previous, current = candidate, current, candidate_utility
        else:
            previous, current = current, powered

        trace.append(_round_row(inst, rounds, assoc, p, current, adopted))
        logger.debug(
            "Joint round %d: utility %.6f (association %s)",
            rounds,
            current,
            "adopted" if adopted else "kept",
        )
        if current - previous < joint_options.utility_tol:
            converged = True
            break

    return JointResult(
        association=assoc,
        p=p,
        trace=trace,
        rounds=rounds,
        converged=converged,
        power_trace=power_trace,
    )


def iterate_assoc_power(
    inst: NetworkInstance,
    p0: Optional[np.ndarray] = None,
    joint_options: Optional[JointOptions] = None,
    dcd_options: Optional[DcdOptions] = None,
    newton_options: Optional[NewtonOptions] = None,
    *,
    antenna_scaling: bool = False,
) -> JointResult:
    """Alternate DCD association and Newton power control until the utility settles.

    The first association comes from DCD at ``p0`` (default: maximum PSD). Each
    round then re-optimizes the powers for the current association and re-runs
    DCD at the new powers. With ``accept_only_improving_association`` a DCD
    association that would lower the true utility is discarded, so the round
    trace never decreases.
    """

    joint_options = joint_options or JointOptions()

    def associate(p: np.ndarray) -> Association:
        a = utility_matrix(inst, p, antenna_scaling)
        return dcd_solve(a, inst.num_users, dcd_options).association

    result = _alternate(
        inst,
        p0,
        associate,
        guard=joint_options.accept_only_improving_association,
        joint_options=joint_options,
        newton_options=newton_options,
        antenna_scaling=antenna_scaling,
    )
    logger.info("Joint DCD + power: %d rounds, utility %.6f", result.rounds, result.utility)
    return result


def iterate_maxsinr_power(
    inst: NetworkInstance,
    p0: Optional[np.ndarray] = None,
    joint_options: Optional[JointOptions] = None,
    newton_options: Optional[NewtonOptions] = None,
    *,
    antenna_scaling: bool = False,
) -> JointResult:
    """Same loop with the max-SINR rule and no guard; the trace may go down."""

    result = _alternate(
        inst,
        p0,
        lambda p: max_sinr_assoc(inst, p),
        guard=False,
        joint_options=joint_options or JointOptions(),
        newton_options=newton_options,
        antenna_scaling=antenna_scaling,
    )
    logger.info("Joint max-SINR + power: %d rounds, utility %.6f", result.rounds, result.utility)
    return result


# ---------------------------------------------------------------------------
# Direct dual optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirectDualTraceRow:
    iteration: int
    updated_bs: Optional[int]
    dual_objective: float
    best_primal_utility: float
    power_solver_calls: int


@dataclass
class DirectDualResult:
    association: Association
    p: np.ndarray
    dual: DualState
    utility: float
    trace: list[DirectDualTraceRow] = field(default_factory=list)
    power_solver_calls: int = 0


@dataclass
class _InnerMax:
    value: float
    counts: np.ndarray
    calls: int


class _DirectDualProblem:
    """Lagrangian maximization over (X, p) at fixed prices, with primal bookkeeping."""

    def __init__(
        self,
        inst: NetworkInstance,
        options: DirectDualOptions,
        newton_options: Optional[NewtonOptions],
    ) -> None:
        self.inst = inst
        self.options = options
        self.newton_options = newton_options
        upper = max_power(inst)
        rng = np.random.default_rng(options.seed)
        starts = [upper]
        for _ in range(options.num_starts - 1):
            starts.append(upper * 10.0 ** rng.uniform(-3.0, 0.0, size=inst.num_bs))
        self.power_starts = starts
        self.best_assoc: Optional[Association] = None
        self.best_p: Optional[np.ndarray] = None
        self.best_utility = -math.inf

    def record(self, assoc: Association, p: np.ndarray) -> None:
        value = network_utility(self.inst, assoc, p)
        if value > self.best_utility:
            self.best_utility = value
            self.best_assoc = assoc
            self.best_p = p.copy()

    def _climb(self, mu: np.ndarray, assoc: Association, p: np.ndarray) -> tuple[float, Association, int]:
        calls = 0
        for _ in range(self.options.inner_alt_max):
            p = newton_power_solve(self.inst, assoc, p, self.newton_options).p
            calls += 1
            updated = argmax_association(utility_matrix(self.inst, p), mu)
            if updated.same_as(assoc):
                break
            assoc = updated
        a = utility_matrix(self.inst, p)
        served = np.arange(self.inst.num_users)
        value = float(np.sum(a[served, assoc.bs_of] - mu[assoc.bs_of]))
        self.record(assoc, p)
        return value, assoc, calls

    def maximize(self, mu: np.ndarray) -> _InnerMax:
        starts = [(max_sinr_assoc(self.inst, p), p) for p in self.power_starts]
        if self.best_assoc is not None:
            starts.append((self.best_assoc, self.best_p))
        best_value, best_counts, calls = -math.inf, None, 0
        for assoc, p in starts:
            value, final_assoc, used = self._climb(mu, assoc, p)
            calls += used
            if value > best_value:
                best_value, best_counts = value, final_assoc.k
        return _InnerMax(value=best_value, counts=np.asarray(best_counts, dtype=float), calls=calls)

    def dual_value(self, inner: _InnerMax, mu: np.ndarray, nu: float) -> float:
        return float(inner.value + np.exp(mu - nu - 1.0).sum() + nu * self.inst.num_users)


def _bisect_price(
    problem: _DirectDualProblem, mu: np.ndarray, nu: float, j: int
) -> tuple[float, int]:
    """Root of e^{mu_j - nu - 1} - n_j(mu_j) by bracketing and bisection."""

    options = problem.options
    calls = 0

    def slope(value: float) -> float:
        nonlocal calls
        trial = mu.copy()
        trial[j] = value
        inner = problem.maximize(trial)
        calls += inner.calls
        return math.exp(value - nu - 1.0) - inner.counts[j]

    width = options.bracket_width
    lo, hi = mu[j] - width, mu[j] + width
    for _ in range(options.max_bracket_expansions):
        if slope(lo) <= 0:
            break
        width *= 2.0
        lo = mu[j] - width
    width = options.bracket_width
    for _ in range(options.max_bracket_expansions):
        if slope(hi) >= 0:
            break
        width *= 2.0
        hi = mu[j] + width

    while hi - lo > options.mu_bisection_tol:
        mid = 0.5 * (lo + hi)
        direction = slope(mid)
        if direction == 0.0:
            return mid, calls
        if direction > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), calls


def direct_dual_solve(
    inst: NetworkInstance,
    options: Optional[DirectDualOptions] = None,
    newton_options: Optional[NewtonOptions] = None,
) -> DirectDualResult:
    """Minimize the joint problem's dual by coordinate bisection on the prices.

    Every dual evaluation maximizes the Lagrangian over association and power
    heuristically: from each start, Newton power control and the price-adjusted
    association alternate. Fixed random starts keep the evaluation a function of
    the prices; the best primal pair seen so far is added as one more start so
    the reported dual value never falls below it.
    """

    options = options or DirectDualOptions()
    problem = _DirectDualProblem(inst, options, newton_options)
    num_users, num_bs = inst.num_users, inst.num_bs

    brackets = math.ceil(math.log2(2 * options.bracket_width / options.mu_bisection_tol)) + 2
    estimated = (options.num_starts + 1) * options.inner_alt_max * brackets
    if estimated > options.power_call_budget:
        logger.warning(
            "Direct dual may need about %d power-solver calls per price update (budget %d)",
            estimated,
            options.power_call_budget,
        )

    warm_calls = 0
    if options.seed_with_alternation:
        warm = iterate_assoc_power(inst, None, None, None, newton_options)
        problem.record(warm.association, warm.p)
        warm_calls = warm.rounds

    mu = np.zeros(num_bs)
    nu = update_nu(mu, num_users)
    inner = problem.maximize(mu)
    total_calls = warm_calls + inner.calls
    g = problem.dual_value(inner, mu, nu)
    trace = [DirectDualTraceRow(0, None, g, problem.best_utility, inner.calls)]

    iteration = 0
    for sweep in range(1, options.outer_sweeps + 1):
        g_start = g
        for j in range(num_bs):
            mu[j], calls = _bisect_price(problem, mu, nu, j)
            nu = update_nu(mu, num_users)
            inner = problem.maximize(mu)
            calls += inner.calls
            total_calls += calls
            g = problem.dual_value(inner, mu, nu)
            iteration += 1
            trace.append(DirectDualTraceRow(iteration, j, g, problem.best_utility, calls))
            if calls > options.power_call_budget:
                logger.warning(
                    "Price update of BS %d used %d power-solver calls (budget %d)",
                    j,
                    calls,
                    options.power_call_budget,
                )
        logger.debug("Direct dual sweep %d: dual %.6f best primal %.6f", sweep, g, problem.best_utility)
        if abs(g_start - g) < options.dual_tol:
            break

    dual = DualState(mu=mu.copy(), nu=nu, dual_objective=g, iteration=iteration)
    logger.info(
        "Direct dual finished: dual %.6f primal %.6f (%d power-solver calls)",
        g,
        problem.best_utility,
        total_calls,
    )
    return DirectDualResult(
        association=problem.best_assoc,
        p=problem.best_p,
        dual=dual,
        utility=problem.best_utility,
        trace=trace,
        power_solver_calls=total_calls,
    )


def maxsinr_optpower_solve(
    inst: NetworkInstance,
    options: Optional[DirectDualOptions] = None,
    newton_options: Optional[NewtonOptions] = None,
) -> tuple[Association, np.ndarray]:
    """Max-SINR association evaluated at the powers the direct dual method found."""

    p = direct_dual_solve(inst, options, newton_options).p
    return max_sinr_assoc(inst, p), p
