import numpy as np
import pytest

from vscope.grid import Grid, VectorField


@pytest.fixture(scope="session")
def grid16():
    return Grid(16)


@pytest.fixture(scope="session")
def grid32():
    return Grid(32)


def random_solenoidal(grid, seed=0, kmax=4):
    """Smooth random divergence-free field built from a few Fourier modes."""
    from vscope.solver import InitialCondition, initial_condition

    ic = InitialCondition("random", seed=seed, peak_wavenumber=min(kmax, grid.n_points // 6), energy=0.5)
    return initial_condition(ic, grid)
