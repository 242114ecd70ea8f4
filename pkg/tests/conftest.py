import numpy as np
import pytest
from scipy.ndimage import uniform_filter

from fields.models import BoundaryKind, Grid
from services.monitoring import monitoring
from services.representation import TransportParams


def random_params(grid: Grid, rng: np.random.Generator, psi_scale: float = 1.0,
                  lam_range=(0.1, 0.5), a_range=(0.3, 0.9)) -> TransportParams:
    """Гладкие случайные параметры с sigma = 1 - A"""
    d = grid.ndim
    psi_shape = grid.shape if d == 2 else (3,) + grid.shape
    size = (1,) * (len(psi_shape) - d) + (3,) * d
    psi = uniform_filter(rng.uniform(-psi_scale, psi_scale, size=psi_shape), size=size, mode='nearest')
    b = rng.uniform(-np.pi, np.pi, size=(d * (d - 1) // 2,) + grid.shape)
    lam = rng.uniform(*lam_range, size=(d,) + grid.shape)
    a = rng.uniform(*a_range, size=grid.shape)
    return TransportParams.from_arrays(grid, psi, b, lam, a, 1.0 - a)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid2d():
    return Grid((8, 8), (1.0, 1.0))


@pytest.fixture
def patch_grid2d():
    return Grid((8, 8), (1.0, 1.0), BoundaryKind.CAUCHY_PATCH)


@pytest.fixture
def grid3d():
    return Grid((5, 5, 5), (1.0, 1.0, 1.0))


@pytest.fixture
def params2d(grid2d, rng):
    return random_params(grid2d, rng)


@pytest.fixture
def params3d(grid3d, rng):
    return random_params(grid3d, rng)


@pytest.fixture(autouse=True)
def clean_monitoring():
    monitoring.reset()
    yield
    monitoring.reset()


@pytest.fixture
def make_params():
    return random_params
