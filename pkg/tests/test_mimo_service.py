from __future__ import annotations

import math

import numpy as np
import pytest
from factories import make_instance, random_mimo_instance

from hetnet.models.network import NetworkConfig
from hetnet.services.baseline_service import max_sinr_assoc
from hetnet.services.dcd_service import Association
from hetnet.services.mimo_service import (
    BeamformerSet,
    MissingChannelsError,
    SchedulerState,
    TwoStageOptions,
    WmmseOptions,
    maxsinr_wmmse_solve,
    network_rates_mimo,
    rate_mimo,
    select_candidates,
    siso_surrogate,
    two_stage_solve,
    wmmse_percell,
)
from hetnet.services.network_service import NetworkInstance, gen_topology, max_power

QUICK = TwoStageOptions(candidates_per_bs=2, min_slots=5, window=5, max_slots=15)


def _channel_instance(channels, *, noise=1.0, max_psd=1.0, bandwidth_hz=1e6) -> NetworkInstance:
    channels = np.asarray(channels, dtype=complex)
    num_users, num_bs = channels.shape[:2]
    gain = np.maximum(np.mean(np.abs(channels) ** 2, axis=(2, 3)), 1e-30)
    return NetworkInstance(
        gain=gain,
        max_psd=np.full(num_bs, max_psd),
        noise_psd=np.full(num_users, noise),
        bandwidth_hz=bandwidth_hz,
        channels=channels,
    )


def _random_beamformers(inst: NetworkInstance, serving, seed: int) -> BeamformerSet:
    rng = np.random.default_rng(seed)
    shape = (inst.num_users, inst.channels.shape[3])
    v = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * 1e-4
    return BeamformerSet(v=v, serving=np.asarray(serving), budget=max_power(inst))


@pytest.mark.parametrize("seed", range(5))
def test_log_det_and_sinr_forms_agree(seed):
    inst = random_mimo_instance(seed, 4, 2, antennas_bs=2, antennas_user=2)
    beamformers = _random_beamformers(inst, [0, 1, 0, 1], seed)

    rates = network_rates_mimo(inst, beamformers)
    for i in range(inst.num_users):
        expected = rate_mimo(inst, i, int(beamformers.serving[i]), beamformers)
        assert rates[i] == pytest.approx(expected, rel=1e-9)


def test_zero_beamformer_gives_zero_rate():
    inst = random_mimo_instance(1, 3, 2)
    beamformers = _random_beamformers(inst, [0, 0, 1], 1)
    beamformers = beamformers.with_vectors(np.array([1]), np.zeros((1, 2)))

    assert rate_mimo(inst, 1, 0, beamformers) == 0.0
    assert network_rates_mimo(inst, beamformers)[1] == pytest.approx(0.0, abs=1e-12)


def test_rate_mimo_rejects_wrong_bs():
    inst = random_mimo_instance(2, 2, 2)
    with pytest.raises(ValueError):
        rate_mimo(inst, 0, 1, _random_beamformers(inst, [0, 1], 2))


def test_single_user_miso_closed_form():
    h = np.array([[[[1.0 + 0.5j, -0.3 + 0.8j]]]])
    inst = _channel_instance(h, noise=0.5, max_psd=2.0)
    solution = wmmse_percell(inst, 0, [0], np.array([1.0]), 2.0)

    expected = 1e6 * math.log2(1.0 + 2.0 * np.sum(np.abs(h) ** 2) / 0.5)
    assert solution.rates_bps[0] == pytest.approx(expected, rel=1e-6)
    assert solution.beamformers.is_feasible()


def test_weight_scaling_leaves_beamformers_unchanged():
    inst = random_mimo_instance(3, 3, 1, antennas_bs=2, antennas_user=2)
    budget = float(inst.max_psd[0])
    omega = np.array([1.0, 0.5, 2.0])

    base = wmmse_percell(inst, 0, [0, 1, 2], omega, budget)
    scaled = wmmse_percell(inst, 0, [0, 1, 2], 10.0 * omega, budget)

    scale = np.max(np.abs(base.beamformers.v))
    np.testing.assert_allclose(scaled.beamformers.v, base.beamformers.v, rtol=1e-7, atol=1e-7 * scale)


def test_orthogonal_users_match_power_split_grid():
    channels = np.zeros((2, 1, 1, 2), dtype=complex)
    channels[0, 0, 0, 0] = math.sqrt(10.0)
    channels[1, 0, 0, 1] = 1.0
    inst = _channel_instance(channels)
    omega = np.array([1.0, 2.0])

    solution = wmmse_percell(
        inst, 0, [0, 1], omega, 1.0, WmmseOptions(max_iters=500, rel_tol=1e-10)
    )

    t = np.linspace(0.0, 1.0, 2001)
    grid = np.max(omega[0] * np.log2(1.0 + 10.0 * t) + omega[1] * np.log2(2.0 - t))
    assert solution.trace[-1] == pytest.approx(grid, rel=1e-3)


@pytest.mark.parametrize("seed", range(5))
def test_weighted_sum_rate_is_monotone_and_feasible(seed):
    inst = random_mimo_instance(seed, 4, 1, antennas_bs=2, antennas_user=2)
    omega = np.random.default_rng(seed).uniform(0.5, 2.0, size=4)
    solution = wmmse_percell(inst, 0, np.arange(4), omega, float(inst.max_psd[0]))

    trace = np.array(solution.trace)
    assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[1:]))
    assert solution.beamformers.is_feasible()


def test_out_of_cell_interference_lowers_rates():
    inst = random_mimo_instance(6, 3, 2, antennas_bs=2)
    alone = wmmse_percell(inst, 0, [0, 1], np.ones(2), float(inst.max_psd[0]))

    neighbour = _random_beamformers(inst, [0, 0, 1], 6)
    neighbour = neighbour.with_vectors(np.array([2]), np.array([[1e-3, 1e-3]]))
    crowded = wmmse_percell(
        inst, 0, [0, 1], np.ones(2), float(inst.max_psd[0]), beamformers=neighbour
    )

    assert np.sum(crowded.rates_bps) < np.sum(alone.rates_bps)
    np.testing.assert_array_equal(crowded.beamformers.v[2], neighbour.v[2])


def _scheduler(omega, limits):
    omega = np.asarray(omega, dtype=float)
    return SchedulerState(omega=omega, r_avg=1.0 / omega, S=np.asarray(limits))


def test_select_candidates_takes_everyone_when_cell_is_small():
    assoc = Association.from_assignment([0, 1, 0], 2)
    selected = select_candidates(assoc, _scheduler([1, 1, 1], [2, 2]), np.ones(3))
    assert [s.tolist() for s in selected] == [[0, 2], [1]]


def test_select_candidates_prefers_high_weight():
    assoc = Association.from_assignment([0, 0, 0, 0], 1)
    selected = select_candidates(assoc, _scheduler([1.0, 3.0, 2.0, 0.5], [2]), np.ones(4))
    assert selected[0].tolist() == [1, 2]


def test_select_candidates_ties_go_to_lower_index():
    assoc = Association.from_assignment([0, 0, 0], 1)
    selected = select_candidates(assoc, _scheduler([1.0, 1.0, 1.0], [2]), np.ones(3))
    assert selected[0].tolist() == [0, 1]


def test_siso_surrogate_scales_bandwidth_by_antennas():
    single = make_instance([[1e-10, 1e-11]], antennas_per_bs=[1, 1])
    quad = make_instance([[1e-10, 1e-11]], antennas_per_bs=[4, 1])
    p = max_power(single)

    diff = siso_surrogate(quad, p) - siso_surrogate(single, p)
    np.testing.assert_allclose(diff, [[math.log(4.0), 0.0]], atol=1e-12)


def test_mimo_methods_need_channels():
    inst = make_instance([[1e-10, 1e-11]])
    with pytest.raises(MissingChannelsError):
        two_stage_solve(inst)
    with pytest.raises(MissingChannelsError):
        maxsinr_wmmse_solve(inst)


def test_two_stage_keeps_association_fixed(mimo_config):
    inst = gen_topology(mimo_config)
    result = two_stage_solve(inst, QUICK)

    assert result.association.same_as(result.stage_one.association)
    assert len(result.slots) == len(result.beamformers) <= QUICK.max_slots
    for record, beamformers in zip(result.slots, result.beamformers):
        np.testing.assert_array_equal(beamformers.serving, result.association.bs_of)
        assert beamformers.is_feasible()
        idle = ~record.scheduled
        assert np.all(beamformers.v[idle] == 0)
        per_bs = np.bincount(
            result.association.bs_of[record.scheduled], minlength=inst.num_bs
        )
        assert np.all(per_bs <= QUICK.candidates_per_bs)

    sched = result.scheduler
    assert np.all(sched.r_avg > 0)
    np.testing.assert_allclose(sched.omega * sched.r_avg, 1.0)
    assert math.isfinite(result.utility)


def test_unlimited_candidates_schedule_everyone(mimo_config):
    inst = gen_topology(mimo_config)
    options = TwoStageOptions(candidates_per_bs=None, min_slots=3, window=3, max_slots=4)
    result = maxsinr_wmmse_solve(inst, options)

    assert result.association.same_as(max_sinr_assoc(inst, max_power(inst)))
    for record in result.slots:
        assert record.scheduled.all()


def test_candidate_limit_below_antennas_rejected(mimo_config):
    inst = gen_topology(mimo_config)
    with pytest.raises(ValueError):
        maxsinr_wmmse_solve(inst, TwoStageOptions(candidates_per_bs=1))


@pytest.mark.slow
def test_two_stage_beats_max_sinr_with_mixed_pico_layout():
    config = NetworkConfig(
        num_cells=3, pico_counts=(2, 1, 1), users_per_cell=35, antennas_per_bs=4, antennas_per_user=2
    )
    sizes = (4, 6, 8)
    utilities = {size: [] for size in sizes}
    wins = 0
    for seed in range(10):
        inst = gen_topology(config.model_copy(update={"seed": seed}))
        assert inst.num_bs == 7 and inst.num_users == 105
        for size in sizes:
            result = two_stage_solve(inst, TwoStageOptions(candidates_per_bs=size))
            for beamformers in result.beamformers:
                np.testing.assert_array_equal(beamformers.serving, result.association.bs_of)
            utilities[size].append(result.utility)
        baseline = maxsinr_wmmse_solve(inst, TwoStageOptions(candidates_per_bs=8))
        wins += utilities[8][-1] > baseline.utility

    assert wins >= 9
    means = [np.mean(utilities[size]) for size in sizes]
    assert means[0] <= means[1] <= means[2]
