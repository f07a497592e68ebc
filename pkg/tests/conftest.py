import numpy as np
import pytest

from stcpriv.experiments import ExperimentConfig, clustered_setup


@pytest.fixture(scope="session")
def standard_setup():
    """1000 clustered vectors (N=512), learned 256x512 transform, S_x=10 codes."""
    cfg = ExperimentConfig()
    return cfg, clustered_setup(cfg)


@pytest.fixture(scope="session")
def wide_setup():
    """Same data with S_x=64, where noisy probes still identify their source item."""
    cfg = ExperimentConfig(S_x=64)
    return cfg, clustered_setup(cfg, max_iters=20)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
