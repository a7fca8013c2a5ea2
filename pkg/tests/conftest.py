import math

import numpy as np
import pytest
from hypothesis import settings

from hipsynth.ground_model import SolverParams, build_grid

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def params():
    return SolverParams()


@pytest.fixture(scope="session")
def grid42():
    return build_grid(4, 2, math.pi / 2, math.pi / 4)


@pytest.fixture(scope="session")
def grid21():
    return build_grid(2, 1, math.pi / 2, math.pi / 4)


def random_design(grid, rng, lo=0.2, hi=1.0):
    """Stiffness in [lo, hi], shape variables in [0.2, 0.8]."""
    return np.concatenate([rng.uniform(lo, hi, grid.n_springs), rng.uniform(0.2, 0.8, 2 * (grid.n_nodes - 1))])


@pytest.fixture(scope="session")
def datadir():
    from pathlib import Path

    return Path(__file__).parent / "data"
