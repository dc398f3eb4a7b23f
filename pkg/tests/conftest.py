"""Shared fixtures: small boxes, laws and seeded environments."""

import numpy as np
import pytest

from ohmstat.environment import ConductanceLaw, homogeneous, sample
from ohmstat.lattice import box


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def path2():
    """Unit conductances on the box {0, 1} of Z"""
    return homogeneous(box(1, 2))


@pytest.fixture
def uniform_law():
    return ConductanceLaw.uniform(0.5)


@pytest.fixture
def two_point_law():
    return ConductanceLaw.two_point(0.5, 0.5)


@pytest.fixture
def env2d(uniform_law):
    return sample(uniform_law, box(2, 8), seed=11)


@pytest.fixture
def env2d_small_contrast():
    return sample(ConductanceLaw.uniform(0.9), box(2, 8), seed=5)
