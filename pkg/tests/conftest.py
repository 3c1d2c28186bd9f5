import numpy as np
import pytest

from leo_pace.channel import LossConfig, OfdmConfig
from leo_pace.config import build_settings, default_config
from leo_pace.scenario import ScenarioConfig, generate_scenario


@pytest.fixture(scope="session")
def settings():
    return build_settings(default_config())


@pytest.fixture(scope="session")
def ofdm():
    return OfdmConfig()


@pytest.fixture(scope="session")
def small_ofdm():
    """Few subcarriers and a 4x4 array for brute-force oracles."""
    return OfdmConfig(num_subcarriers=32, n_h=4, n_v=4)


@pytest.fixture(scope="session")
def loss():
    return LossConfig()


@pytest.fixture(scope="session")
def scenario():
    return generate_scenario(ScenarioConfig(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
