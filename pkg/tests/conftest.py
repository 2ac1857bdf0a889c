import numpy as np
import pytest

from mildflow.fields import VectorField
from mildflow.spectral import make_grid


@pytest.fixture
def grid2():
    return make_grid(2, 32)


@pytest.fixture
def grid3():
    return make_grid(3, 16)


def random_field(grid, comps, seed, role="generic"):
    rng = np.random.default_rng(seed)
    shape = (comps,) + grid.shape if comps else grid.shape
    return VectorField.from_values(grid, rng.standard_normal(shape), role)


def band_limited(grid, comps, seed, kmax=None):
    """Random field holding only modes the two-thirds mask keeps."""
    rng = np.random.default_rng(seed)
    shape = ((comps,) if comps else ()) + grid.spectral_shape
    c = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * grid.dealias_mask
    if kmax is not None:
        for idx in grid.index:
            c = c * (np.abs(idx) <= kmax)
    return VectorField(grid, grid.forward(grid.inverse(c)))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
