import numpy as np
import pytest

from choquard.models.equation import ModelParams, PotentialSpec
from choquard.models.spectral_core import gaussian_field, make_grid
from choquard.models.verify import random_profile


@pytest.fixture
def grid3():
    return make_grid(3, 16, 16.0)


@pytest.fixture
def grid1():
    return make_grid(1, 64, 16.0)


@pytest.fixture
def ground_params():
    return ModelParams(dim=3, s=0.5, alpha=2.0, beta=2.0, p=2.2, q=1.8, lam=0.5)


@pytest.fixture
def nodal_params():
    return ModelParams(dim=3, s=0.6, alpha=2.0, beta=2.0, p=2.6, q=2.2, lam=0.5, mode='nodal')


@pytest.fixture
def ground_params_1d():
    return ModelParams(dim=1, s=0.6, alpha=0.5, beta=0.5, p=2.5, q=2.0, lam=0.5,
                       potential=PotentialSpec.parse('radial:1,2,1'))


@pytest.fixture
def nodal_params_1d():
    return ModelParams(dim=1, s=0.6, alpha=0.5, beta=0.5, p=2.5, q=2.2, lam=0.5, mode='nodal')


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_field(grid3, rng):
    return random_profile(grid3, rng)


@pytest.fixture
def dipole_1d(grid1):
    """Opposite-sign bumps at +-3"""
    return gaussian_field(grid1, 1.0, [-3.0]) - gaussian_field(grid1, 1.0, [3.0])


@pytest.fixture
def positive_field(grid3):
    return gaussian_field(grid3, 1.5)

