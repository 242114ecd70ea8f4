import numpy as np
import pytest

from fields.models import BoundaryKind, Grid, ScalarField, TensorField, VectorField
from fields.operators import (
    cell_coordinates, curl, curl_array, curl_transpose, diffusion_matrix, divergence, gradient,
    interior_mask, laplacian_tensor,
)
from utils.exceptions import ConfigError


@pytest.fixture
def grid():
    return Grid((12, 9), (0.5, 1.0))


def test_gradient_of_linear_field_is_exact(grid):
    x, y = cell_coordinates(grid)
    g = gradient(ScalarField(grid, 3.0 * x - 2.0 * y))
    assert np.allclose(g.components[0], 3.0, atol=1e-12)
    assert np.allclose(g.components[1], -2.0, atol=1e-12)


def test_gradient_matches_numpy(grid, rng):
    values = rng.standard_normal(grid.shape)
    g = gradient(ScalarField(grid, values))
    expected = np.gradient(values, *grid.spacing, edge_order=2)
    for axis in range(2):
        assert np.allclose(g.components[axis], expected[axis], atol=1e-12)


def test_divergence_of_curl_vanishes_2d(grid, rng):
    psi = ScalarField(grid, rng.uniform(-10, 10, grid.shape))
    div = divergence(curl(psi))
    assert np.max(np.abs(div.values)) <= 1e-12


def test_divergence_of_curl_vanishes_3d(grid3d, rng):
    potential = VectorField(grid3d, rng.uniform(-10, 10, (3,) + grid3d.shape))
    div = divergence(curl(potential))
    assert np.max(np.abs(div.values)) <= 1e-12


def test_curl_requires_matching_potential(grid, grid3d):
    with pytest.raises(ConfigError):
        curl(VectorField.zeros(grid))
    with pytest.raises(ConfigError):
        curl(ScalarField.zeros(grid3d))


def test_curl_transpose_is_adjoint(grid3d, rng):
    p = rng.standard_normal((3,) + grid3d.shape)
    w = rng.standard_normal((3,) + grid3d.shape)
    lhs = np.sum(curl_array(p, grid3d) * w)
    rhs = np.sum(p * curl_transpose(w, grid3d))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-10)


def test_laplacian_of_quadratic(grid):
    x, y = cell_coordinates(grid)
    c = x ** 2 + y ** 2
    identity = TensorField.identity(grid)

    patch = laplacian_tensor(ScalarField(grid.with_boundary(BoundaryKind.CAUCHY_PATCH), c), identity)
    assert np.allclose(patch.values, 4.0, atol=1e-10)

    closed = laplacian_tensor(ScalarField(grid, c), identity)
    assert np.allclose(closed.values[interior_mask(grid)], 4.0, atol=1e-10)


def test_zero_flux_conserves_mass(grid, rng):
    c = ScalarField(grid, rng.uniform(0, 1, grid.shape))
    matrices = rng.standard_normal(grid.shape + (2, 2))
    d = TensorField.from_full(grid, matrices @ np.swapaxes(matrices, -1, -2))
    total = np.sum(laplacian_tensor(c, d).values)
    assert abs(total) <= 1e-10 * np.max(np.abs(d.entries))


def test_diffusion_matrix_matches_laplacian(grid, rng):
    c = ScalarField(grid, rng.standard_normal(grid.shape))
    d = TensorField(grid, rng.uniform(0.1, 1.0, (3,) + grid.shape))
    assembled = diffusion_matrix(d) @ c.flat()
    assert np.allclose(assembled.reshape(grid.shape), laplacian_tensor(c, d).values, atol=1e-12)


def test_interior_mask(grid):
    mask = interior_mask(grid)
    assert mask.sum() == (12 - 2) * (9 - 2)
    assert not mask[0].any() and not mask[:, -1].any()
