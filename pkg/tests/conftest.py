import numpy as np
import pytest

from resoflow.lab import default_config
from resoflow.potentials import build_triple, ring_barrier, step_profile


@pytest.fixture(scope="session")
def default_triple():
    return build_triple(ring_barrier(), 1.33, 1.66, e0=1.0, e_plus=1.5,
                        e_plus_prime=1.8)


@pytest.fixture(scope="session")
def square_well():
    return step_profile(-2.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def config():
    return default_config()


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
