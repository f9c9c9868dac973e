import numpy as np
import pytest

from shieldsim.config import SimConfig
from shieldsim.network import generate_map, minimal_map


@pytest.fixture(scope="session")
def default_config():
    return SimConfig()


@pytest.fixture(scope="session")
def small_config():
    """Light traffic, short episodes: fast deterministic worlds for unit tests."""
    cfg = SimConfig()
    cfg.car_range = (8, 8)
    cfg.ped_range = (6, 6)
    cfg.episode_seconds = 20.0
    return cfg


@pytest.fixture(scope="session")
def net_seed1(default_config):
    return generate_map(1, default_config.map_params)


@pytest.fixture(scope="session")
def mini_net():
    return minimal_map()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
