import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from skorokhod_lab import lagrangian as lagr  # noqa: E402
from skorokhod_lab.lattice import build_grid  # noqa: E402
from skorokhod_lab.measures import DiscreteMeasure  # noqa: E402


@pytest.fixture
def tiny3():
    """Point mass in the middle of three nodes, split evenly to the sides."""
    grid = build_grid(x_min=0, x_max=4, n_interior=3, ratio=1, horizon_steps=2)
    mu = DiscreteMeasure.from_fractions([0, 1, 0])
    nu = DiscreteMeasure.from_fractions([0.5, 0, 0.5])
    return grid, mu, nu, lagr.increasing(1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
