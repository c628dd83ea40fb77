import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cfda import compdata as cd  # noqa: E402


@pytest.fixture
def unit_grid():
    return cd.TimeGrid.trapezoid(np.linspace(0.0, 1.0, 11))


@pytest.fixture
def year_grid():
    return cd.TimeGrid.yearly(1959, 2015)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_composition(rng, grid, D=4, id="r"):
    """Smooth random composition: random clr polynomials in time."""
    t = (grid.points - grid.points[0]) / (grid.points[-1] - grid.points[0])
    u = rng.normal(size=(D, 3)) @ np.stack([np.ones_like(t), t, t**2])
    return cd.FunctionalComposition(grid, cd.clr_inv_array(u - u.mean(axis=0)), None, id)
