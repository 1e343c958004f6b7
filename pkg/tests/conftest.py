import numpy as np
import pytest
from hypothesis import settings

from nltransfer import build_grid, builtin_model

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid16():
    return build_grid(1.0, 16)


@pytest.fixture(scope="session")
def grid32():
    return build_grid(1.0, 32)


@pytest.fixture(scope="session")
def gauss():
    return builtin_model("gauss-gauss", 1.0)


@pytest.fixture(scope="session")
def free():
    return builtin_model("gauss-gauss", 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(rng, grid):
    from nltransfer import StateVector

    v = rng.standard_normal(2 * grid.n) + 1j * rng.standard_normal(2 * grid.n)
    return StateVector.from_stacked(grid, v)
