import numpy as np
import pytest

from fields.models import ScalarField, TensorField, VectorField
from fields.operators import divergence, interior_mask
from services.representation import (
    AnomalyField, DiffusionSpectralParams, TransportParams, VelocityPotential, build_diffusion,
    build_velocity, derive, diffusion_vjp, feature_maps, matrix_exp_skew, rotation_derivatives,
    rotation_field, velocity_vjp,
)
from utils.exceptions import ConfigError


def _series_exp(k: np.ndarray, terms: int = 40) -> np.ndarray:
    result = np.eye(k.shape[0])
    term = np.eye(k.shape[0])
    for n in range(1, terms):
        term = term @ k / n
        result = result + term
    return result


def _skew3(b):
    return np.array([[0.0, -b[0], -b[1]], [b[0], 0.0, -b[2]], [b[1], b[2], 0.0]])


class TestMatrixExp:
    def test_quarter_turn_2d(self):
        u = matrix_exp_skew([np.pi / 2], 2)
        assert np.allclose(u, [[0.0, -1.0], [1.0, 0.0]], atol=1e-15)

    def test_zero_is_identity(self):
        assert np.array_equal(matrix_exp_skew([0.0, 0.0, 0.0], 3), np.eye(3))

    @pytest.mark.parametrize('scale', [1e-5, 5e-3, 0.3, 2.0])
    def test_matches_series_3d(self, rng, scale):
        b = rng.standard_normal(3)
        b = scale * b / np.linalg.norm(b)
        u = matrix_exp_skew(b, 3)
        assert np.allclose(u, _series_exp(_skew3(b)), atol=1e-13)
        assert np.allclose(u.T @ u, np.eye(3), atol=1e-13)
        assert np.linalg.det(u) == pytest.approx(1.0, abs=1e-12)

    def test_unsupported_dimension(self):
        with pytest.raises(ConfigError):
            matrix_exp_skew([0.0], 1)

    @pytest.mark.parametrize('scale', [1e-3, 1.5])
    def test_rotation_derivatives_3d(self, rng, scale):
        b = scale * rng.standard_normal((3, 2))
        derivatives = rotation_derivatives(b, 3)
        step = 1e-6
        for k in range(3):
            shift = np.zeros_like(b)
            shift[k] = step
            numeric = (rotation_field(b + shift, 3) - rotation_field(b - shift, 3)) / (2 * step)
            assert np.allclose(derivatives[k], numeric, atol=1e-8)


class TestConstruction:
    def test_velocity_is_divergence_free(self, params2d, params3d):
        for params in (params2d, params3d):
            v_bar, v = build_velocity(params)
            mask = interior_mask(params.grid)
            assert np.max(np.abs(divergence(v).values[mask])) <= 1e-12
            assert np.max(np.abs(divergence(v_bar).values[mask])) <= 1e-12

    def test_diffusion_is_symmetric_psd(self, params3d):
        d_bar, d, u, lam = build_diffusion(params3d)
        for tensor in (d_bar, d):
            eigenvalues = np.linalg.eigvalsh(tensor.full())
            assert eigenvalues.min() >= -1e-12
        gram = np.einsum('...ki,...kj->...ij', u, u)
        assert np.allclose(gram, np.eye(3), atol=1e-10)
        assert np.allclose(np.linalg.det(u), 1.0, atol=1e-10)

    def test_reconstruction(self, params2d):
        _, _, u, lam = build_diffusion(params2d)
        d_bar = derive(params2d).d_bar.full()
        rebuilt = u @ (lam[..., :, None] * np.swapaxes(u, -1, -2))
        assert np.allclose(d_bar, rebuilt, atol=1e-12)

    def test_no_anomaly_fields_coincide(self, params2d):
        params = params2d.replace(a=np.ones(params2d.grid.shape))
        fields = derive(params)
        assert np.array_equal(fields.v.components, fields.v_bar.components)
        assert np.array_equal(fields.d.entries, fields.d_bar.entries)

    def test_anomaly_scales_diffusion(self, params2d):
        fields = derive(params2d)
        assert np.allclose(fields.d.entries, params2d.anomaly.values[None] * fields.d_bar.entries)


class TestValidation:
    def test_anomaly_range(self, grid2d):
        with pytest.raises(ConfigError):
            AnomalyField(ScalarField(grid2d, np.zeros(grid2d.shape)))
        with pytest.raises(ConfigError):
            AnomalyField(ScalarField.constant(grid2d, 1.5))

    def test_negative_lambda(self, grid2d):
        with pytest.raises(ConfigError):
            DiffusionSpectralParams(grid2d, np.zeros((1,) + grid2d.shape), -np.ones((2,) + grid2d.shape))

    def test_potential_kind(self, grid2d, grid3d):
        with pytest.raises(ConfigError):
            VelocityPotential(VectorField.zeros(grid2d))
        with pytest.raises(ConfigError):
            VelocityPotential(ScalarField.zeros(grid3d))

    def test_negative_sigma(self, params2d):
        with pytest.raises(ConfigError):
            params2d.replace(sigma=-np.ones(params2d.grid.shape))


class TestFeatureMaps:
    def test_isotropic_has_zero_fa(self, grid2d):
        maps = feature_maps(VectorField.zeros(grid2d), TensorField.identity(grid2d, 0.7))
        assert np.allclose(maps['fa'].values, 0.0)
        assert np.allclose(maps['trace'].values, 1.4)

    def test_rank_one_has_unit_fa(self, grid2d):
        entries = np.zeros((3,) + grid2d.shape)
        entries[0] = 1.0
        maps = feature_maps(VectorField.zeros(grid2d), TensorField(grid2d, entries))
        assert np.allclose(maps['fa'].values, 1.0)

    def test_zero_tensor(self, grid3d):
        maps = feature_maps(VectorField.zeros(grid3d), TensorField.zeros(grid3d))
        assert np.all(maps['fa'].values == 0.0)

    def test_velocity_magnitude(self, grid2d):
        components = np.zeros((2,) + grid2d.shape)
        components[0], components[1] = 3.0, 4.0
        maps = feature_maps(VectorField(grid2d, components), TensorField.zeros(grid2d))
        assert np.allclose(maps['vmag'].values, 5.0)


def _directional(f, x, direction, step=1e-6):
    return (f(x + step * direction) - f(x - step * direction)) / (2 * step)


class TestVjp:
    @pytest.mark.parametrize('fixture', ['params2d', 'params3d'])
    def test_velocity_vjp(self, request, rng, fixture):
        params = request.getfixturevalue(fixture)
        grid = params.grid
        v_bar_cot = rng.standard_normal((grid.ndim,) + grid.shape)
        v_cot = rng.standard_normal((grid.ndim,) + grid.shape)
        psi_cot, a_cot = velocity_vjp(params, v_bar_cot, v_cot)

        def objective(psi, a):
            v_bar, v = build_velocity(params.replace(psi=psi, a=a))
            return np.sum(v_bar.components * v_bar_cot) + np.sum(v.components * v_cot)

        psi, a = params.potential.array, params.anomaly.values
        d_psi = rng.standard_normal(psi.shape)
        d_a = rng.standard_normal(a.shape)
        numeric_psi = _directional(lambda x: objective(x, a), psi, d_psi, step=1e-3)
        numeric_a = _directional(lambda x: objective(psi, x), a, d_a, step=1e-3)
        assert np.sum(psi_cot * d_psi) == pytest.approx(numeric_psi, rel=1e-8)
        assert np.sum(a_cot * d_a) == pytest.approx(numeric_a, rel=1e-8)

    @pytest.mark.parametrize('fixture', ['params2d', 'params3d'])
    def test_diffusion_vjp(self, request, rng, fixture):
        params = request.getfixturevalue(fixture)
        grid = params.grid
        k = len(derive(params).d.entries)
        d_bar_cot = rng.standard_normal((k,) + grid.shape)
        d_cot = rng.standard_normal((k,) + grid.shape)
        u_cot = rng.standard_normal(grid.shape + (grid.ndim, grid.ndim))
        lam_cot = rng.standard_normal(grid.shape + (grid.ndim,))
        b_cot, lam_grad, a_cot = diffusion_vjp(params, d_bar_cot, d_cot, u_cot, lam_cot)

        def objective(b, lam, a):
            d_bar, d, u, lam_cells = build_diffusion(params.replace(b=b, **{'lambda': lam}, a=a))
            return (np.sum(d_bar.entries * d_bar_cot) + np.sum(d.entries * d_cot)
                    + np.sum(u * u_cot) + np.sum(lam_cells * lam_cot))

        b, lam, a = params.spectral.b, params.spectral.lam, params.anomaly.values
        d_b = rng.standard_normal(b.shape)
        d_lam = rng.standard_normal(lam.shape)
        d_a = rng.standard_normal(a.shape)
        numeric_b = _directional(lambda x: objective(x, lam, a), b, d_b)
        numeric_lam = _directional(lambda x: objective(b, x, a), lam, d_lam, step=1e-4)
        numeric_a = _directional(lambda x: objective(b, lam, x), a, d_a, step=1e-4)
        assert np.sum(b_cot * d_b) == pytest.approx(numeric_b, rel=1e-6)
        assert np.sum(lam_grad * d_lam) == pytest.approx(numeric_lam, rel=1e-8)
        assert np.sum(a_cot * d_a) == pytest.approx(numeric_a, rel=1e-8)

    def test_diffusion_vjp_near_zero_rotation(self, grid3d, rng):
        a = rng.uniform(0.5, 0.9, grid3d.shape)
        params = TransportParams.from_arrays(
            grid3d, np.zeros((3,) + grid3d.shape), 1e-3 * rng.standard_normal((3,) + grid3d.shape),
            rng.uniform(0.1, 1.0, (3,) + grid3d.shape), a, 1.0 - a)
        d_cot = rng.standard_normal((6,) + grid3d.shape)
        b_cot, _, _ = diffusion_vjp(params, None, d_cot)

        b = params.spectral.b
        d_b = rng.standard_normal(b.shape)

        def objective(x):
            return np.sum(build_diffusion(params.replace(b=x))[1].entries * d_cot)

        assert np.sum(b_cot * d_b) == pytest.approx(_directional(objective, b, d_b, step=1e-7), rel=1e-5)
