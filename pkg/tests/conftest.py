import numpy as np
import pytest

from viton.data import make_sample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_sample():
    """One 64×64 synthetic fixture, shared read-only across tests."""
    return make_sample(0, 0, (64, 64))
