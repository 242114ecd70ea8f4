import math

import numpy as np
import pytest

from fields.models import BoundaryKind, Grid, ScalarField, TensorField, TimeSeries, VectorField
from fields.operators import cell_coordinates, interior_mask, laplacian_tensor
from services.representation import TransportParams, derive
from services.simulation import gaussian_initial
from services.solver import (
    AdvectionForm, ForwardRecord, Integrator, SolverConfig, TransportIntegrator, advection_rhs,
    cfl_max_dt, diffusion_rhs, integrate, plan_substeps, wellposedness_report,
)
from utils.exceptions import BlowUpError, CFLViolationError, ConfigError


def _constant_velocity(grid: Grid, *values: float) -> VectorField:
    components = np.stack([np.full(grid.shape, v) for v in values])
    return VectorField(grid, components)


class TestConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.form is AdvectionForm.INCOMPRESSIBLE
        assert cfg.integrator is Integrator.RK4_FIXED
        assert cfg.substep is None

    def test_strings_are_parsed(self):
        cfg = SolverConfig(substep='auto', form='conservative', integrator='rk45')
        assert cfg.substep is None
        assert cfg.form is AdvectionForm.CONSERVATIVE
        assert cfg.integrator is Integrator.RK45_ADAPTIVE

    @pytest.mark.parametrize('kwargs', [
        {'dt': 0.0},
        {'dt': 0.01, 'substep': 0.02},
        {'cfl_safety': 1.5},
        {'seed': -1},
        {'rtol': 0.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            SolverConfig(**kwargs)


class TestRightHandSide:
    def test_zero_velocity(self, grid2d, rng):
        c = ScalarField(grid2d, rng.standard_normal(grid2d.shape))
        for form in AdvectionForm:
            assert not np.any(advection_rhs(c, VectorField.zeros(grid2d), form).values)

    @pytest.mark.parametrize('form', list(AdvectionForm))
    def test_uniform_flow_on_linear_profile(self, grid2d, form):
        x = cell_coordinates(grid2d)[0]
        rhs = advection_rhs(ScalarField(grid2d, x), _constant_velocity(grid2d, 1.0, 0.0), form)
        assert np.allclose(rhs.values[interior_mask(grid2d)], -1.0, atol=1e-12)

    def test_forms_agree_for_divergence_free_velocity(self, params2d, rng):
        grid = params2d.grid
        v = derive(params2d).v
        c = ScalarField(grid, rng.uniform(0, 1, grid.shape))
        conservative = advection_rhs(c, v, AdvectionForm.CONSERVATIVE).values
        incompressible = advection_rhs(c, v, AdvectionForm.INCOMPRESSIBLE).values
        mask = interior_mask(grid)
        assert np.max(np.abs(conservative[mask] - incompressible[mask])) <= 1e-12

    def test_diffusion_rhs_delegates_to_laplacian(self, params2d, rng):
        grid = params2d.grid
        c = ScalarField(grid, rng.standard_normal(grid.shape))
        d = derive(params2d).d
        assert np.array_equal(diffusion_rhs(c, d).values, laplacian_tensor(c, d).values)

    def test_diffusion_lowers_peak(self):
        grid = Grid((32, 32), (1.0, 1.0))
        c = gaussian_initial(grid, (15.0, 16.0), 3.0)
        rhs = diffusion_rhs(c, TensorField.identity(grid))
        peak = np.unravel_index(np.argmax(c.values), grid.shape)
        assert rhs.values[peak] < 0


class TestStability:
    def test_advective_bound(self, grid2d):
        bound = cfl_max_dt(_constant_velocity(grid2d, 1.0, 0.0), TensorField.zeros(grid2d), grid2d, 0.01, 1.0)
        assert bound == pytest.approx(1.0)

    def test_mixed_bound(self, grid2d):
        bound = cfl_max_dt(_constant_velocity(grid2d, 2.0, 0.0), TensorField.identity(grid2d, 0.25),
                           grid2d, 0.01, 1.0)
        assert bound == pytest.approx(0.5)

    def test_no_transport_returns_dt(self, grid2d):
        assert cfl_max_dt(VectorField.zeros(grid2d), TensorField.zeros(grid2d), grid2d, 0.01) == 0.01
        assert math.isinf(cfl_max_dt(VectorField.zeros(grid2d), TensorField.zeros(grid2d), grid2d))

    def test_plan_substeps_auto(self):
        assert plan_substeps(0.003, SolverConfig(dt=0.01)) == (4, 0.0025)

    def test_explicit_substep_above_bound(self, grid2d):
        cfg = SolverConfig(dt=1.0, substep=1.0)
        with pytest.raises(CFLViolationError):
            TransportIntegrator(grid2d, _constant_velocity(grid2d, 1.0, 0.0), TensorField.zeros(grid2d), cfg)

    def test_blow_up_is_reported(self, grid2d, rng):
        integrator = TransportIntegrator(grid2d, VectorField.zeros(grid2d), TensorField.zeros(grid2d), SolverConfig())
        with pytest.raises(BlowUpError):
            integrator._check(np.full(grid2d.size, np.inf), 1.0, 0)
        with pytest.raises(BlowUpError):
            integrator._check(np.full(grid2d.size, 2e6), 1.0, 0)


class TestIntegration:
    def test_first_frame_is_initial(self, params2d):
        grid = params2d.grid
        c0 = gaussian_initial(grid, (3.5, 3.5), 1.5)
        series = integrate(c0, params2d, SolverConfig(), 5)
        assert series.n_frames == 5
        assert series.dt == 0.01
        assert np.array_equal(series.data[0], c0.values)

    def test_zero_sigma_stochastic_equals_deterministic(self, params2d):
        grid = params2d.grid
        params = params2d.replace(sigma=np.zeros(grid.shape))
        c0 = gaussian_initial(grid, (4.0, 3.0), 1.5)
        noisy = integrate(c0, params, SolverConfig(stochastic=True, seed=9), 6)
        plain = integrate(c0, params, SolverConfig(), 6)
        assert np.array_equal(noisy.data, plain.data)

    def test_stochastic_is_reproducible(self, params2d):
        c0 = gaussian_initial(params2d.grid, (4.0, 3.0), 1.5)
        cfg = SolverConfig(stochastic=True, seed=2024)
        first = integrate(c0, params2d, cfg, 6)
        second = integrate(c0, params2d, cfg, 6)
        other = integrate(c0, params2d, SolverConfig(stochastic=True, seed=2025), 6)
        assert np.array_equal(first.data, second.data)
        assert not np.array_equal(first.data, other.data)

    def test_conservative_form_conserves_mass(self, make_params, rng):
        grid = Grid((16, 16), (1.0, 1.0))
        params = make_params(grid, rng, psi_scale=5.0)
        c0 = gaussian_initial(grid, (8.0, 7.0), 2.0)
        series = integrate(c0, params, SolverConfig(form=AdvectionForm.CONSERVATIVE), 40)
        mass = series.data.reshape(series.n_frames, -1).sum(axis=1)
        assert np.max(np.abs(mass - mass[0])) <= 1e-8 * mass[0]

    def test_linearity(self, params2d, rng):
        grid = params2d.grid
        a = ScalarField(grid, rng.uniform(0, 1, grid.shape))
        b = ScalarField(grid, rng.uniform(0, 1, grid.shape))
        combined = ScalarField(grid, 2.0 * a.values - 3.0 * b.values)
        cfg = SolverConfig()
        lhs = integrate(combined, params2d, cfg, 8).data
        rhs = 2.0 * integrate(a, params2d, cfg, 8).data - 3.0 * integrate(b, params2d, cfg, 8).data
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(rhs))

    def test_translation_by_uniform_flow(self):
        grid = Grid((64, 16), (1.0, 1.0))
        c0 = gaussian_initial(grid, (20.0, 8.0), 4.0)
        cfg = SolverConfig(dt=0.25)
        integrator = TransportIntegrator(grid, _constant_velocity(grid, 1.0, 0.0), TensorField.zeros(grid), cfg)
        frames = integrator.run(c0.values, 41)

        x = cell_coordinates(grid)[0]
        start = np.sum(x * frames[0]) / np.sum(frames[0])
        end = np.sum(x * frames[-1]) / np.sum(frames[-1])
        assert end - start == pytest.approx(10.0, abs=1e-3)
        profile = frames[-1].sum(axis=1)
        assert abs(int(np.argmax(profile)) - 30) <= 1

    def test_advected_gaussian_matches_translated_profile(self):
        velocity = np.array([1.0, 0.5])
        center = np.array([32.0, 32.0])
        std, n_frames, dt = 8.0, 11, 0.1
        errors = []
        for n, h, substep in ((64, 1.0, 0.05), (128, 0.5, 0.025)):
            grid = Grid((n, n), (h, h))
            c0 = gaussian_initial(grid, tuple(center), std)
            cfg = SolverConfig(dt=dt, substep=substep)
            integrator = TransportIntegrator(grid, _constant_velocity(grid, *velocity), TensorField.zeros(grid), cfg)
            frames = integrator.run(c0.values, n_frames)

            shift = center + velocity * dt * (n_frames - 1)
            offset = cell_coordinates(grid) - shift.reshape(2, 1, 1)
            exact = np.exp(-np.sum(offset ** 2, axis=0) / (2.0 * std ** 2))
            errors.append(np.linalg.norm(frames[-1] - exact) / np.linalg.norm(exact))

        coarse, fine = errors
        assert coarse <= 0.02
        assert fine <= 0.02
        assert coarse / fine >= 1.8

    def test_cauchy_boundary_held_at_initial(self, params2d):
        grid = params2d.grid.with_boundary(BoundaryKind.CAUCHY_PATCH)
        c0 = gaussian_initial(grid, (3.0, 4.0), 2.0)
        series = integrate(c0, params2d, SolverConfig(), 5)
        boundary = ~interior_mask(grid)
        for frame in series.data:
            assert np.array_equal(frame[boundary], c0.values[boundary])

    def test_cauchy_boundary_follows_series(self, params2d, rng):
        grid = params2d.grid.with_boundary(BoundaryKind.CAUCHY_PATCH)
        frames = rng.uniform(0, 1, (4,) + grid.shape)
        observed = TimeSeries(grid, 0.01, frames)
        series = integrate(observed.frame(0), params2d, SolverConfig(), 4, boundary_series=observed)
        boundary = ~interior_mask(grid)
        for k in range(4):
            assert np.allclose(series.data[k][boundary], frames[k][boundary], atol=1e-15)

    def test_adaptive_matches_fixed(self, params2d):
        c0 = gaussian_initial(params2d.grid, (4.0, 4.0), 1.5)
        fixed = integrate(c0, params2d, SolverConfig(), 6)
        adaptive = integrate(c0, params2d, SolverConfig(integrator='rk45', rtol=1e-10, atol=1e-12), 6)
        assert np.allclose(adaptive.data, fixed.data, atol=1e-7)

    def test_frames_must_be_at_least_two(self, params2d):
        c0 = gaussian_initial(params2d.grid, (4.0, 4.0), 1.5)
        with pytest.raises(ConfigError):
            integrate(c0, params2d, SolverConfig(), 1)


@pytest.mark.slow
def test_isotropic_diffusion_converges_second_order():
    def error(n: int, h: float) -> float:
        grid = Grid((n, n), (h, h))
        center = (15.5, 15.5)
        std0, t = 3.0, 1.0
        c0 = gaussian_initial(grid, center, std0)
        integrator = TransportIntegrator(grid, VectorField.zeros(grid), TensorField.identity(grid),
                                         SolverConfig(dt=t / 20))
        final = integrator.run(c0.values, 21)[-1]
        variance = std0 ** 2 + 2.0 * t
        coords = cell_coordinates(grid)
        radius_sq = sum((coords[i] - center[i]) ** 2 for i in range(2))
        exact = (std0 ** 2 / variance) * np.exp(-radius_sq / (2.0 * variance))
        return float(np.sqrt(np.mean((final - exact) ** 2)))

    coarse, fine = error(32, 1.0), error(63, 0.5)
    assert coarse / fine >= 3.5


@pytest.mark.slow
def test_noise_variance_matches_theory():
    grid = Grid((3, 3), (1.0, 1.0))
    sigma, n_frames, dt = 0.1, 41, 0.01
    finals = []
    for seed in range(1000):
        integrator = TransportIntegrator(grid, VectorField.zeros(grid), TensorField.zeros(grid),
                                         SolverConfig(dt=dt, stochastic=True, seed=seed),
                                         np.full(grid.shape, sigma))
        finals.append(integrator.run(np.zeros(grid.shape), n_frames)[-1])
    finals = np.array(finals).reshape(1000, -1)
    expected = sigma ** 2 * (n_frames - 1) * dt
    pooled = float(np.mean(np.var(finals, axis=0, ddof=1)))
    standard_error = expected * np.sqrt(2.0 / 999) / np.sqrt(grid.size)
    assert abs(pooled - expected) <= 3.0 * standard_error


class TestAdjoint:
    def _setup(self, make_params, rng, form):
        grid = Grid((8, 8), (1.0, 1.0), BoundaryKind.CAUCHY_PATCH)
        params = make_params(grid, rng)
        fields = derive(params)
        cfg = SolverConfig(dt=0.01, substep=0.005, form=form)
        c0 = rng.uniform(0, 1, grid.shape)
        return grid, fields, cfg, c0

    @pytest.mark.parametrize('form', list(AdvectionForm))
    def test_backward_matches_finite_difference(self, make_params, rng, form):
        grid, fields, cfg, c0 = self._setup(make_params, rng, form)
        weights = rng.standard_normal((4,) + grid.shape)

        def objective(v, d):
            return float(np.sum(TransportIntegrator(grid, v, d, cfg).run(c0, 4) * weights))

        integrator = TransportIntegrator(grid, fields.v, fields.d, cfg)
        record = ForwardRecord()
        integrator.run(c0, 4, record=record)
        v_cot, d_cot = integrator.backward(record, weights)

        direction_v = rng.standard_normal(v_cot.shape)
        direction_d = rng.standard_normal(d_cot.shape)
        step = 1e-6
        numeric_v = (objective(VectorField(grid, fields.v.components + step * direction_v), fields.d)
                     - objective(VectorField(grid, fields.v.components - step * direction_v), fields.d)) / (2 * step)
        numeric_d = (objective(fields.v, TensorField(grid, fields.d.entries + step * direction_d))
                     - objective(fields.v, TensorField(grid, fields.d.entries - step * direction_d))) / (2 * step)
        assert np.sum(v_cot * direction_v) == pytest.approx(numeric_v, rel=1e-5)
        assert np.sum(d_cot * direction_d) == pytest.approx(numeric_d, rel=1e-5)

    def test_backward_requires_rk4(self, make_params, rng):
        grid, fields, _, c0 = self._setup(make_params, rng, AdvectionForm.INCOMPRESSIBLE)
        integrator = TransportIntegrator(grid, fields.v, fields.d, SolverConfig(integrator='rk45'))
        with pytest.raises(ConfigError):
            integrator.backward(ForwardRecord(), np.zeros((2,) + grid.shape))


class TestWellposedness:
    def test_constant_parameters(self, grid2d):
        params = TransportParams.from_arrays(
            grid2d, np.full(grid2d.shape, 2.0), np.full((1,) + grid2d.shape, 0.4),
            np.full((2,) + grid2d.shape, 0.3), np.ones(grid2d.shape), np.full(grid2d.shape, 0.2))
        report = wellposedness_report(params)
        fields = derive(params)
        assert report.lipschitz == pytest.approx(0.0, abs=1e-24)
        expected_growth = float(np.sum(fields.d.full()[0, 0] ** 2) + 0.2 ** 2)
        assert report.growth == pytest.approx(expected_growth, rel=1e-12)

    def test_matches_brute_force(self, make_params, rng):
        grid = Grid((4, 5), (1.0, 0.5))
        params = make_params(grid, rng)
        fields = derive(params)
        v, d, sigma = fields.v.components, fields.d.full(), fields.sigma.values
        coords = cell_coordinates(grid)

        lipschitz, growth, pairs = 0.0, 0.0, 0
        for i in range(4):
            for j in range(5):
                x = coords[:, i, j]
                magnitude = np.sum(v[:, i, j] ** 2) + np.sum(d[i, j] ** 2) + sigma[i, j] ** 2
                growth = max(growth, magnitude / (1.0 + np.sum(x ** 2)))
                for di, dj in ((1, 0), (0, 1)):
                    k, m = i + di, j + dj
                    if k >= 4 or m >= 5:
                        continue
                    pairs += 1
                    numerator = (np.sum((v[:, i, j] - v[:, k, m]) ** 2) + np.sum((d[i, j] - d[k, m]) ** 2)
                                 + (sigma[i, j] - sigma[k, m]) ** 2)
                    lipschitz = max(lipschitz, numerator / np.sum((x - coords[:, k, m]) ** 2))

        report = wellposedness_report(params)
        assert report.n_pairs == pairs
        assert report.lipschitz == pytest.approx(lipschitz, rel=1e-10)
        assert report.growth == pytest.approx(growth, rel=1e-10)
