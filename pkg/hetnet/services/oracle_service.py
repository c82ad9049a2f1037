from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import xlogy

from hetnet.services.dcd_service import Association, association_value
from hetnet.services.network_service import NetworkInstance, max_power, network_utility, utility_matrix
from hetnet.services.power_service import NewtonOptions, newton_power_solve

logger = logging.getLogger(__name__)

MAX_ASSIGNMENTS = 10**6
MAX_JOINT_BS = 3
MAX_JOINT_USERS = 6
MAX_GRID_POINTS = 20
_CHUNK = 1 << 14


class OracleServiceError(RuntimeError):
    pass


class OracleSizeError(OracleServiceError):
    pass


@dataclass(frozen=True)
class OracleResult:
    utility: float
    association: Association
    p: Optional[np.ndarray] = None


def _assignments(num_users: int, num_bs: int, start: int, stop: int) -> np.ndarray:
    """Rows start..stop-1 of the lexicographic enumeration, user 0 most significant."""

    index = np.arange(start, stop)
    digits = np.empty((index.size, num_users), dtype=int)
    for user in range(num_users - 1, -1, -1):
        digits[:, user] = index % num_bs
        index = index // num_bs
    return digits


def _chunk_values(a: np.ndarray, assignments: np.ndarray) -> np.ndarray:
    num_bs = a.shape[1]
    served = a[np.arange(a.shape[0])[None, :], assignments].sum(axis=1)
    loads = np.stack([(assignments == j).sum(axis=1) for j in range(num_bs)], axis=1)
    return served - xlogy(loads, loads).sum(axis=1)


def exhaustive_oracle(a: np.ndarray, num_users: int, num_bs: int) -> OracleResult:
    """Best association for a fixed utility matrix by full enumeration.

    Ties keep the lexicographically first assignment.
    """

    a = np.asarray(a, dtype=float)
    if a.shape != (num_users, num_bs):
        raise ValueError("utility matrix shape does not match K and L")
    total = num_bs**num_users
    if total > MAX_ASSIGNMENTS:
        raise OracleSizeError(f"{num_bs}^{num_users} assignments exceed the {MAX_ASSIGNMENTS} limit")

    best_value, best_row = -math.inf, None
    for start in range(0, total, _CHUNK):
        rows = _assignments(num_users, num_bs, start, min(start + _CHUNK, total))
        values = _chunk_values(a, rows)
        idx = int(np.argmax(values))
        if values[idx] > best_value:
            best_value, best_row = float(values[idx]), rows[idx]
    assoc = Association.from_assignment(best_row, num_bs)
    return OracleResult(utility=association_value(a, assoc), association=assoc)


def power_grid(inst: NetworkInstance, points: int) -> np.ndarray:
    """Per-BS geometric grid from 1e-3 of the PSD limit up to the limit, shape (points, L)."""

    upper = max_power(inst)
    if points == 1:
        return upper[None, :]
    return upper[None, :] * np.logspace(-3.0, 0.0, points)[:, None]


def joint_brute_oracle(
    inst: NetworkInstance,
    power_grid_points: int = 10,
    newton_options: Optional[NewtonOptions] = None,
) -> OracleResult:
    """Search every association on a per-BS power grid, then polish with Newton."""

    num_users, num_bs = inst.num_users, inst.num_bs
    if num_bs > MAX_JOINT_BS or num_users > MAX_JOINT_USERS:
        raise OracleSizeError(
            f"joint oracle supports L <= {MAX_JOINT_BS} and K <= {MAX_JOINT_USERS}"
        )
    if not 1 <= power_grid_points <= MAX_GRID_POINTS:
        raise OracleSizeError(f"power grid must have 1..{MAX_GRID_POINTS} points per BS")

    levels = power_grid(inst, power_grid_points)
    rows = _assignments(num_users, num_bs, 0, num_bs**num_users)
    best = (-math.inf, None, None)
    for combo in np.ndindex(*(power_grid_points,) * num_bs):
        p = levels[list(combo), np.arange(num_bs)]
        values = _chunk_values(utility_matrix(inst, p), rows)
        idx = int(np.argmax(values))
        if values[idx] > best[0]:
            best = (float(values[idx]), rows[idx], p)

    _, row, p = best
    assoc = Association.from_assignment(row, num_bs)
    polished = newton_power_solve(inst, assoc, p, newton_options).p
    utility = network_utility(inst, assoc, polished)
    logger.debug("Joint oracle: grid best %.6f, polished %.6f", best[0], utility)
    return OracleResult(utility=utility, association=assoc, p=polished)
