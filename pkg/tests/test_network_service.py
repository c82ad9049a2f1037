from __future__ import annotations

import math

import numpy as np
import pytest
from factories import make_instance, random_instance

from hetnet.models.network import NetworkConfig
from hetnet.services.dcd_service import Association, association_value
from hetnet.services.network_service import (
    InstanceFormatError,
    dump_instance,
    gen_topology,
    load_instance,
    log_utility,
    max_power,
    network_utility,
    pairwise_distances,
    pathloss_db,
    rate_report,
    rate_siso,
    sinr,
    sinr_matrix,
    user_rates,
    utility_matrix,
    wraparound_lattice,
)


@pytest.mark.parametrize(
    ("distance", "expected"),
    [(1.0, 128.1), (0.01, 52.9), (10.0, 165.7)],
)
def test_pathloss_reference_values(distance, expected):
    assert pathloss_db(distance) == pytest.approx(expected, abs=1e-9)


def test_pathloss_increases_with_distance():
    d = np.linspace(0.01, 5.0, 200)
    assert np.all(np.diff(pathloss_db(d)) > 0)


def test_pathloss_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        pathloss_db(0.0)


def test_gen_topology_shapes_and_gains(small_config):
    inst = gen_topology(small_config)

    assert inst.num_bs == small_config.num_bs
    assert inst.num_users == small_config.num_users
    assert np.all(inst.gain > 0)
    assert inst.bs_tier.count("macro") == small_config.num_cells
    assert not inst.has_channels


def test_gen_topology_default_layout():
    inst = gen_topology(NetworkConfig(seed=11))

    assert inst.num_bs == 28
    assert inst.num_users == 210
    assert np.all(np.isfinite(inst.gain))


def test_gen_topology_is_deterministic(small_config):
    first = gen_topology(small_config)
    second = gen_topology(small_config)

    np.testing.assert_array_equal(first.gain, second.gain)
    assert dump_instance(first) == dump_instance(second)


def test_gen_topology_seed_changes_drop(small_config):
    other = small_config.model_copy(update={"seed": small_config.seed + 1})
    assert not np.array_equal(gen_topology(small_config).gain, gen_topology(other).gain)


def test_gen_topology_draws_channels_for_multi_antenna(mimo_config):
    inst = gen_topology(mimo_config)

    assert inst.channels.shape == (inst.num_users, inst.num_bs, 1, 2)
    np.testing.assert_array_equal(inst.antennas_per_bs, 2)


def test_gen_topology_large_scale_independent_of_antennas(mimo_config):
    siso = mimo_config.model_copy(update={"antennas_per_bs": 1})
    np.testing.assert_array_equal(gen_topology(siso).gain, gen_topology(mimo_config).gain)


def test_channel_power_matches_large_scale_gain():
    inst = gen_topology(NetworkConfig(seed=5, antennas_per_bs=2, antennas_per_user=2))
    m, n = 2, 2
    energy = np.sum(np.abs(inst.channels) ** 2, axis=(2, 3))

    assert np.mean(energy / (inst.gain * m * n)) == pytest.approx(1.0, abs=0.03)


def test_pico_counts_per_cell():
    config = NetworkConfig(num_cells=3, pico_counts=(2, 1, 1), users_per_cell=35)
    inst = gen_topology(config)

    assert config.num_bs == 7
    assert inst.num_bs == 7 and inst.num_users == 105
    assert inst.bs_tier == ("macro", "pico", "pico", "macro", "pico", "macro", "pico")


def test_pico_counts_allow_cells_without_picos():
    inst = gen_topology(NetworkConfig(num_cells=3, pico_counts=(0, 2, 0), users_per_cell=4))
    assert inst.bs_tier.count("pico") == 2
    assert inst.bs_tier.count("macro") == 3


@pytest.mark.parametrize("counts", [(1, 1), (1, -1, 0), (1, 1, 1, 1)])
def test_pico_counts_must_cover_each_cell(counts):
    with pytest.raises(ValueError):
        NetworkConfig(num_cells=3, pico_counts=counts)


def test_wraparound_rejects_unsupported_cell_count():
    with pytest.raises(ValueError):
        NetworkConfig(num_cells=4)


def test_wraparound_distance_invariant_under_lattice_shift():
    lattice = wraparound_lattice(7, 0.5)
    rng = np.random.default_rng(0)
    users = rng.uniform(-1.0, 1.0, size=(20, 2))
    bss = rng.uniform(-1.0, 1.0, size=(5, 2))

    base = pairwise_distances(users, bss, lattice)
    for vector in (lattice[0], lattice[1], lattice[0] - 2 * lattice[1]):
        shifted = pairwise_distances(users + vector, bss, lattice)
        np.testing.assert_allclose(shifted, base, atol=1e-12)


def test_sinr_single_bs():
    inst = make_instance([[2.0]], max_psd=[1.0], noise=[0.5], bandwidth_hz=1.0)
    assert sinr(inst, 0, 0, np.array([1.0])) == pytest.approx(4.0)


def test_sinr_equal_received_power_tends_to_one():
    inst = make_instance([[1e-9, 1e-9]], noise=[1e-30])
    p = np.array([1e-6, 1e-6])
    assert sinr(inst, 0, 0, p) == pytest.approx(1.0, rel=1e-9)


def test_sinr_matrix_matches_definition():
    inst = random_instance(4, 6, 3)
    p = max_power(inst)
    matrix = sinr_matrix(inst, p)

    for i in range(inst.num_users):
        for j in range(inst.num_bs):
            interference = sum(inst.gain[i, m] * p[m] for m in range(inst.num_bs) if m != j)
            expected = inst.gain[i, j] * p[j] / (interference + inst.noise_psd[i])
            assert matrix[i, j] == pytest.approx(expected, rel=1e-12)
            assert sinr(inst, i, j, p) == pytest.approx(expected, rel=1e-12)


def test_rate_siso_examples():
    unit = make_instance([[1.0]], max_psd=[1.0], noise=[1.0], bandwidth_hz=1e7)
    assert rate_siso(unit, 0, 0, np.array([1.0]), 1) == pytest.approx(1e7)

    shared = make_instance([[3.0]], max_psd=[1.0], noise=[1.0], bandwidth_hz=1e7)
    assert rate_siso(shared, 0, 0, np.array([1.0]), 5) == pytest.approx(4e6)
    assert rate_siso(shared, 0, 0, np.array([1.0]), 10) == pytest.approx(2e6)


def test_utility_is_natural_log_of_binary_rate_in_mbps():
    inst = make_instance([[3.0]], max_psd=[1.0], noise=[1.0], bandwidth_hz=1e7)
    assoc = Association.from_assignment([0], 1)
    p = np.array([1.0])

    assert rate_siso(inst, 0, 0, p, 1) == pytest.approx(2e7)
    assert network_utility(inst, assoc, p) == pytest.approx(math.log(20.0))


def test_utility_matrix_antenna_scaling():
    inst = make_instance(
        [[1.0]], max_psd=[1.0], noise=[1.0], bandwidth_hz=1e7, antennas_per_bs=[4]
    )
    p = np.array([1.0])

    assert utility_matrix(inst, p)[0, 0] == pytest.approx(math.log(10.0))
    assert utility_matrix(inst, p, antenna_scaling=True)[0, 0] == pytest.approx(math.log(40.0))


def test_network_utility_unit_rate_is_zero():
    inst = make_instance([[1.0]], max_psd=[1.0], noise=[1.0], bandwidth_hz=1e6)
    assoc = Association.from_assignment([0], 1)
    assert network_utility(inst, assoc, np.array([1.0])) == pytest.approx(0.0, abs=1e-12)


def test_association_value_load_penalty():
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    shared = Association.from_assignment([0, 0], 2)
    assert association_value(a, shared) == pytest.approx(2.0 - 2.0 * math.log(2.0))


@pytest.mark.parametrize("seed", range(5))
def test_network_utility_matches_sum_of_log_rates(seed):
    inst = random_instance(seed, 9, 3)
    rng = np.random.default_rng(seed)
    assoc = Association.from_assignment(rng.integers(0, 3, size=9), 3)
    p = max_power(inst) * rng.uniform(0.1, 1.0, size=3)

    rates = user_rates(inst, assoc, p)
    assert network_utility(inst, assoc, p) == pytest.approx(log_utility(rates), rel=1e-10)


def test_rate_report_fractions(crowded_macro_instance):
    assoc = Association.from_assignment([0] * 12 + [1] * 2, 2)
    rates = user_rates(crowded_macro_instance, assoc, max_power(crowded_macro_instance))
    report = rate_report(crowded_macro_instance, assoc, rates)

    assert report.load == [12, 2]
    assert report.macro_user_fraction == pytest.approx(12 / 14)
    assert report.pico_user_fraction == pytest.approx(2 / 14)
    assert report.cdf_points == sorted(report.rate_bps)


def test_instance_export_round_trip(tmp_path, mimo_config):
    inst = gen_topology(mimo_config)
    path = tmp_path / "instance.json"
    path.write_text(dump_instance(inst), encoding="utf-8")

    loaded = load_instance(path)
    np.testing.assert_array_equal(loaded.gain, inst.gain)
    np.testing.assert_array_equal(loaded.channels, inst.channels)
    assert loaded.bs_tier == inst.bs_tier


def test_load_instance_rejects_unknown_version(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"version": 2}', encoding="utf-8")
    with pytest.raises(InstanceFormatError):
        load_instance(path)


def test_instance_validation():
    with pytest.raises(ValueError):
        make_instance([[0.0]])
    with pytest.raises(ValueError):
        make_instance([[1.0]], bandwidth_hz=0.0)
    with pytest.raises(ValueError):
        make_instance([[1.0]], snr_gap=0.5)
