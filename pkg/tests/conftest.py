import numpy as np
import pytest

from heavyflow import _kernels
from heavyflow.field import GridSpec

_kernels.warm_up()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture
def grid():
    return GridSpec(32, 32)


@pytest.fixture
def rect_grid():
    return GridSpec(24, 16, 1.5, 1.0)


@pytest.fixture
def channel_grid():
    return GridSpec(32, 32, wall_mode="periodic-x")
