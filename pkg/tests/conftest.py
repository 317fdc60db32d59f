import pytest

from trajsim.backends.oracle import default_oracle_config
from trajsim.metrics import ReferenceRangeTable
from trajsim.backends.oracle import default_reference_ranges
from trajsim.pipeline import GenConfig, generate_synthetic_corpus


@pytest.fixture(scope="session")
def quiet_oracle_config():
    """Noise-free default world; safe to share, configs are frozen."""
    return default_oracle_config(noise_sigma=0.0, seed=101)


@pytest.fixture(scope="session")
def range_table():
    return ReferenceRangeTable.from_dict(default_reference_ranges())


@pytest.fixture(scope="session")
def small_corpus(quiet_oracle_config):
    """Ten short noise-free episodes with occasional induced jumps."""
    cfg = GenConfig(
        n_episodes=10,
        steps_min=4,
        steps_max=7,
        hs_injection_rate=0.2,
    )
    return generate_synthetic_corpus(quiet_oracle_config, cfg, seed=314)
