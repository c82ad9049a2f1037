from __future__ import annotations

import pytest
from factories import make_instance

from hetnet.models.network import NetworkConfig
from hetnet.services.network_service import NetworkInstance


@pytest.fixture
def small_config() -> NetworkConfig:
    return NetworkConfig(num_cells=1, picos_per_cell=2, users_per_cell=8, seed=3)


@pytest.fixture
def mimo_config() -> NetworkConfig:
    return NetworkConfig(
        num_cells=1,
        picos_per_cell=1,
        users_per_cell=6,
        antennas_per_bs=2,
        antennas_per_user=1,
        seed=5,
    )


@pytest.fixture
def crowded_macro_instance() -> NetworkInstance:
    """Two equal-power BSs: six strong and six edge users near A, two strong users near B."""

    rows = [[1e-9, 1e-13]] * 6 + [[1e-11, 0.5e-11]] * 6 + [[1e-13, 1e-9]] * 2
    return make_instance(rows, bs_tier=("macro", "pico"))
