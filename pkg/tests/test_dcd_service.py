from __future__ import annotations

import math

import numpy as np
import pytest

from hetnet.services.dcd_service import (
    Association,
    DcdOptions,
    argmax_association,
    association_value,
    dcd_solve,
    dual_objective,
    duality_gap_bound,
    recover_association,
    update_mu_j,
    update_nu,
)


def _random_utilities(seed: int, num_users: int, num_bs: int) -> np.ndarray:
    return np.random.default_rng(seed).normal(2.0, 1.5, size=(num_users, num_bs))


def test_dual_objective_examples():
    assert dual_objective(np.array([[0.0]]), np.zeros(1), -1.0, 1) == pytest.approx(0.0)
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert dual_objective(a, np.zeros(2), -1.0, 2) == pytest.approx(2.0)


def test_update_nu_closed_form():
    assert update_nu(np.zeros(2), 2) == pytest.approx(-1.0)


@pytest.mark.parametrize("seed", range(5))
def test_update_nu_matches_population(seed):
    mu = np.random.default_rng(seed).normal(size=6)
    nu = update_nu(mu, 40)
    assert np.exp(mu - nu - 1.0).sum() == pytest.approx(40.0)


def test_update_nu_shift_equivariant():
    mu = np.array([0.3, -1.2, 2.0])
    assert update_nu(mu + 5.0, 10) == pytest.approx(update_nu(mu, 10) + 5.0)


def test_update_nu_rejects_empty_population():
    with pytest.raises(ValueError):
        update_nu(np.zeros(2), 0)


@pytest.mark.parametrize("seed", range(10))
def test_update_mu_j_minimizes_coordinate(seed):
    a = _random_utilities(seed, 12, 4)
    rng = np.random.default_rng(seed + 100)
    mu = rng.normal(size=4)
    nu = update_nu(mu, 12)
    j = int(rng.integers(0, 4))

    best_mu = mu.copy()
    best_mu[j] = update_mu_j(a, mu, nu, j)
    best = dual_objective(a, best_mu, nu, 12)

    for value in np.linspace(best_mu[j] - 5.0, best_mu[j] + 5.0, 401):
        trial = mu.copy()
        trial[j] = value
        assert dual_objective(a, trial, nu, 12) >= best - 1e-9


def test_update_mu_j_single_bs():
    a = np.array([[0.5], [1.0], [2.0], [-1.0], [0.0]])
    nu = update_nu(np.zeros(1), 5)
    mu = np.array([update_mu_j(a, np.zeros(1), nu, 0)])
    assert mu[0] == pytest.approx(nu + 1.0 + math.log(5.0))


def test_argmax_association_breaks_ties_to_lowest_index():
    a = np.array([[1.0, 1.0], [0.0, 2.0]])
    assoc = argmax_association(a, np.zeros(2))
    assert assoc.bs_of.tolist() == [0, 1]
    assert assoc.k.tolist() == [1, 1]


def test_recover_association_splits_symmetric_ties():
    a = np.ones((2, 2))
    result = dcd_solve(a, 2)

    assert result.association.k.tolist() == [1, 1]
    assert association_value(a, result.association) == pytest.approx(2.0)


def test_recover_association_greedy_path_balances_loads():
    a = np.ones((30, 3))
    mu = np.zeros(3)
    nu = update_nu(mu, 30)
    options = DcdOptions(tie_break_exhaustive_limit=0)

    assoc = recover_association(a, mu, nu, options)
    assert sorted(assoc.k.tolist()) == [10, 10, 10]


@pytest.mark.parametrize("order", ["round-robin", "random-permutation"])
@pytest.mark.parametrize("seed", range(5))
def test_dual_trace_is_monotone(order, seed):
    a = _random_utilities(seed, 20, 5)
    result = dcd_solve(a, 20, DcdOptions(update_order=order, seed=seed))

    values = np.array([row.dual_objective for row in result.trace])
    assert np.all(np.diff(values) <= 1e-12)


def test_arbitrary_sequence_order():
    a = _random_utilities(0, 10, 3)
    options = DcdOptions(update_order="arbitrary-sequence", sequence=(2, 0, 2, 1))
    result = dcd_solve(a, 10, options)

    updated = [row.updated_bs for row in result.trace if row.updated_bs is not None]
    assert updated[:4] == [2, 0, 2, 1]


def test_adversarial_sequence_still_converges():
    num_users, num_bs = 24, 6
    a = _random_utilities(11, num_users, num_bs)
    sequence = (num_bs - 1, 0, num_bs - 1, 0) + tuple(range(1, num_bs - 1))
    result = dcd_solve(a, num_users, DcdOptions(update_order="arbitrary-sequence", sequence=sequence))

    assert result.converged
    values = np.array([row.dual_objective for row in result.trace])
    assert np.all(np.diff(values) <= 1e-12)
    for row in result.trace:
        assert row.dual_objective >= row.primal_utility - 1e-9
    dual = result.dual
    bound = duality_gap_bound(result.association, dual.mu, dual.nu)
    assert dual.dual_objective - association_value(a, result.association) <= bound + 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_constant_shift_leaves_association_unchanged(seed):
    a = _random_utilities(seed, 18, 4)
    base = dcd_solve(a, 18)
    shifted = dcd_solve(a + 3.25, 18)

    np.testing.assert_array_equal(shifted.association.bs_of, base.association.bs_of)
    assert shifted.dual.dual_objective == pytest.approx(base.dual.dual_objective + 18 * 3.25)


@pytest.mark.parametrize("seed", range(5))
def test_user_row_shift_leaves_association_unchanged(seed):
    a = _random_utilities(seed, 18, 4)
    offsets = 0.25 * np.random.default_rng(seed + 50).integers(-8, 9, size=18)
    base = dcd_solve(a, 18)
    shifted = dcd_solve(a + offsets[:, None], 18)

    np.testing.assert_array_equal(shifted.association.bs_of, base.association.bs_of)
    assert association_value(a + offsets[:, None], shifted.association) == pytest.approx(
        association_value(a, base.association) + offsets.sum()
    )


def test_arbitrary_sequence_rejects_unknown_bs():
    with pytest.raises(ValueError):
        dcd_solve(np.zeros((2, 2)), 2, DcdOptions(update_order="arbitrary-sequence", sequence=(3,)))


@pytest.mark.parametrize("seed", range(100))
def test_weak_duality_along_trace(seed):
    a = _random_utilities(seed, 15, 4)
    result = dcd_solve(a, 15)

    for row in result.trace:
        assert row.dual_objective >= row.primal_utility - 1e-9
    assert result.dual.dual_objective >= association_value(a, result.association) - 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_gap_bound_covers_final_gap(seed):
    a = _random_utilities(seed, 25, 5)
    result = dcd_solve(a, 25)
    dual = result.dual

    bound = duality_gap_bound(result.association, dual.mu, dual.nu)
    primal = association_value(a, result.association)
    assert bound >= -1e-9
    assert dual.dual_objective - primal <= bound + 1e-6


def test_gap_bound_zero_when_loads_match_targets():
    mu = np.zeros(2)
    nu = update_nu(mu, 2)
    assoc = Association.from_assignment([0, 1], 2)
    assert duality_gap_bound(assoc, mu, nu) == pytest.approx(0.0, abs=1e-12)


def test_single_bs_assigns_everyone():
    a = _random_utilities(3, 7, 1)
    result = dcd_solve(a, 7)

    assert result.association.k.tolist() == [7]
    assert result.dual.mu[0] == pytest.approx(result.dual.nu + 1.0 + math.log(7.0))


def test_dominant_bs_takes_every_user():
    a = np.column_stack([np.full(4, 10.0), np.full(4, -10.0)])
    assert dcd_solve(a, 4).association.k.tolist() == [4, 0]


def test_refresh_nu_every_update_also_monotone():
    a = _random_utilities(8, 16, 4)
    result = dcd_solve(a, 16, DcdOptions(refresh_nu_every_update=True))

    values = np.array([row.dual_objective for row in result.trace])
    assert np.all(np.diff(values) <= 1e-12)


def test_options_validation():
    with pytest.raises(ValueError):
        DcdOptions(convergence_tol=0.0)
    with pytest.raises(ValueError):
        DcdOptions(update_order="arbitrary-sequence")
    with pytest.raises(ValueError):
        DcdOptions(max_sweeps=0)


@pytest.mark.slow
def test_long_mixed_order_runs_never_raise_the_dual():
    num_users, num_bs = 20, 5
    rng = np.random.default_rng(2024)
    updates = 0
    for seed in range(10):
        a = _random_utilities(seed, num_users, num_bs)
        mu = np.zeros(num_bs)
        nu = update_nu(mu, num_users)
        g = dual_objective(a, mu, nu, num_users)
        while updates < 10_000 * (seed + 1):
            kind = updates // 500 % 4
            if kind == 0:
                block = list(range(num_bs))
            elif kind == 1:
                block = rng.permutation(num_bs).tolist()
            elif kind == 2:
                block = [num_bs - 1, 0] * 2
            else:
                block = rng.integers(0, num_bs, size=num_bs).tolist()
            for j in block:
                mu[j] = update_mu_j(a, mu, nu, j)
                updated = dual_objective(a, mu, nu, num_users)
                assert updated <= g + 1e-12
                g = updated
                updates += 1
            nu = update_nu(mu, num_users)
            updated = dual_objective(a, mu, nu, num_users)
            assert updated <= g + 1e-12
            g = updated
    assert updates >= 100_000
