"""
Pytest configuration and shared fixtures for the BPTD test suite
"""
import os
import sys
import tempfile
from pathlib import Path
from typing import Generator
from unittest.mock import patch

import numpy as np
import pytest

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent))

from src.core.config import get_settings
from src.models.params import Hyperparams, ModelDims
from src.models.tensors import CountTensor
from src.services.bptd_model import sample_prior
from src.services.distributions import RngStream


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create temporary directory for tests"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def test_env_vars() -> Generator[None, None, None]:
    """Set up test environment variables and drop cached settings around the test"""
    test_vars = {
        "BPTD_LOG_LEVEL": "DEBUG",
        "BPTD_WORKERS": "2",
        "BPTD_EPS0": "0.1",
    }
    get_settings.cache_clear()
    with patch.dict(os.environ, test_vars):
        yield
    get_settings.cache_clear()


@pytest.fixture
def rng() -> RngStream:
    return RngStream(1234)


@pytest.fixture
def tiny_dims() -> ModelDims:
    """V=4, A=3, T=3 with two communities, topics and regimes"""
    return ModelDims(n_countries=4, n_actions=3, n_steps=3, n_communities=2, n_topics=2, n_regimes=2)


@pytest.fixture
def flat_hyper() -> Hyperparams:
    """Light-tailed priors that keep every parameter well away from zero"""
    return Hyperparams(eps0=1.0, gamma0=1.0)


@pytest.fixture
def tiny_state(tiny_dims, flat_hyper, rng):
    return sample_prior(tiny_dims, flat_hyper, rng)


@pytest.fixture
def tiny_tensor() -> CountTensor:
    """Hand-written 4×4×3×3 tensor with 12 tokens over 6 nonzero cells"""
    subs = np.array([
        [0, 1, 0, 0],
        [0, 2, 1, 0],
        [1, 0, 0, 1],
        [2, 3, 2, 1],
        [3, 0, 1, 2],
        [1, 3, 2, 2],
    ])
    counts = np.array([3, 1, 2, 1, 4, 1])
    return CountTensor.from_arrays((4, 4, 3, 3), subs, counts)


@pytest.fixture
def sample_event_log() -> str:
    """Tab-separated event log: sender, receiver, root action code, month"""
    return "\n".join([
        "# sender\treceiver\taction\tdate",
        "USA\tCHN\t4\t1995-01",
        "CHN\tUSA\t4\t1995-01",
        "USA\tRUS\t19\t1995-02",
        "RUS\tUSA\t16\t1995-02-14",
        "USA\tUSA\t1\t1995-02",
        "IRQ\tUSA\t12\t1995-03",
        "",
        "USA\tIRQ\t18\t1995-03",
    ]) + "\n"
