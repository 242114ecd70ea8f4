"""
Прямое интегрирование (стохастического) уравнения адвекции-диффузии

    dC/dt = -V·grad C (или -div(V C)) + div(D grad C) + sigma dW/dt.

Пространственная часть собирается один раз в разреженную матрицу L, шаг по
времени - классический RK4 с фиксированными подшагами (по умолчанию) или
вложенная пара Дорманда-Принса 5(4). Шум добавляется после детерминированного
подшага (расщепление Эйлера-Маруямы), приращение sigma·sqrt(dt)·eta.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse

from fields.models import TENSOR_ENTRIES, BoundaryKind, Grid, ScalarField, TensorField, TimeSeries, VectorField, check_same_grid
from fields.operators import cell_coordinates, diffusion_matrix, difference_operators, interior_mask, laplacian_tensor
from services.monitoring import monitoring
from services.noise import NoiseProcess
from services.representation import TransportParams, derive
from utils.exceptions import BlowUpError, CFLViolationError, ConfigError
from utils.validators import validate_solver_config

logger = logging.getLogger(__name__)

# Порог аварийной остановки: max|C| больше BLOW_UP_FACTOR * max(max|C0|, 1)
BLOW_UP_FACTOR = 1e6


class AdvectionForm(Enum):
    INCOMPRESSIBLE = 'incompressible'
    CONSERVATIVE = 'conservative'


class Integrator(Enum):
    RK4_FIXED = 'rk4'
    RK45_ADAPTIVE = 'rk45'


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.01
    substep: Optional[float] = None  # None - автоматический выбор по CFL
    cfl_safety: float = 0.8
    form: AdvectionForm = AdvectionForm.INCOMPRESSIBLE
    stochastic: bool = False
    seed: int = 0
    integrator: Integrator = Integrator.RK4_FIXED
    rtol: float = 1e-6
    atol: float = 1e-9

    def __post_init__(self):
        if isinstance(self.substep, str):
            object.__setattr__(self, 'substep', None if self.substep == 'auto' else float(self.substep))
        if isinstance(self.form, str):
            object.__setattr__(self, 'form', AdvectionForm(self.form))
        if isinstance(self.integrator, str):
            object.__setattr__(self, 'integrator', Integrator(self.integrator))
        ok, message = validate_solver_config(self)
        if not ok:
            raise ConfigError(message)


def advection_matrix(v: VectorField, form: AdvectionForm) -> sparse.csr_matrix:
    """
    Противопоточная аппроксимация первого порядка на гранях.

    Скорость на грани - среднее соседних ячеек, v+ = max(v, 0), v- = min(v, 0).
    Консервативная форма: поток грани v+ C_L + v- C_R, стенки закрыты.
    Несжимаемая форма: ячейка получает -v+ dC с левой грани и -v- dC с правой.
    """
    grid = v.grid
    ops = difference_operators(grid)
    total = sparse.csr_matrix((grid.size, grid.size))
    for axis in range(grid.ndim):
        face_v = ops.face_mean[axis] @ v.components[axis].reshape(-1)
        plus = sparse.diags(np.maximum(face_v, 0.0))
        minus = sparse.diags(np.minimum(face_v, 0.0))
        left, right, diff = ops.face_left[axis], ops.face_right[axis], ops.face_difference[axis]
        if form is AdvectionForm.CONSERVATIVE:
            total = total + diff.T @ (plus @ left + minus @ right)
        else:
            total = total - (right.T @ plus + left.T @ minus) @ diff
    return sparse.csr_matrix(total)


def advection_rhs(c: ScalarField, v: VectorField, form: AdvectionForm = AdvectionForm.INCOMPRESSIBLE) -> ScalarField:
    check_same_grid(c, v)
    values = advection_matrix(v, form) @ c.flat()
    return ScalarField(c.grid, values.reshape(c.grid.shape))


def diffusion_rhs(c: ScalarField, d: TensorField) -> ScalarField:
    return laplacian_tensor(c, d)


def transport_matrix(v: VectorField, d: TensorField, form: AdvectionForm,
                     boundary: BoundaryKind) -> sparse.csr_matrix:
    """Полная матрица правой части; для CauchyPatch строки граничных ячеек обнулены"""
    check_same_grid(v, d)
    operator = advection_matrix(v, form) + diffusion_matrix(d, boundary)
    if boundary is BoundaryKind.CAUCHY_PATCH:
        keep = interior_mask(v.grid).reshape(-1).astype(np.float64)
        operator = sparse.diags(keep) @ operator
    return sparse.csr_matrix(operator)


def max_eigenvalue(d: TensorField) -> float:
    if not np.any(d.entries):
        return 0.0
    return float(np.max(np.linalg.eigvalsh(d.full())))


def cfl_max_dt(v: VectorField, d: TensorField, grid: Grid, dt: Optional[float] = None,
               cfl_safety: float = 0.8) -> float:
    """
    Допустимый шаг по условию CFL.

    min(h_i / max|v_i|, min(h_i^2) / (2 d lambda_max(D))) * cfl_safety;
    если V и D нулевые, ограничения нет и возвращается dt.
    """
    bounds = []
    for axis in range(grid.ndim):
        speed = float(np.max(np.abs(v.components[axis])))
        if speed > 0:
            bounds.append(grid.spacing[axis] / speed)
    lam_max = max_eigenvalue(d)
    if lam_max > 0:
        bounds.append(min(h ** 2 for h in grid.spacing) / (2 * grid.ndim * lam_max))
    if not bounds:
        return float(dt) if dt is not None else math.inf
    return cfl_safety * min(bounds)


def plan_substeps(bound: float, cfg: SolverConfig) -> Tuple[int, float]:
    """Число равных подшагов на интервал dt и их длина"""
    if cfg.substep is None:
        n_sub = max(1, math.ceil(cfg.dt / bound - 1e-12)) if math.isfinite(bound) else 1
        return n_sub, cfg.dt / n_sub

    n_sub = max(1, math.ceil(cfg.dt / cfg.substep - 1e-12))
    step = cfg.dt / n_sub
    if step > bound * (1 + 1e-12):
        raise CFLViolationError(f"Подшаг {step:.3e} с больше допустимого по CFL {bound:.3e} с")
    return n_sub, step


# Коэффициенты Дорманда-Принса 5(4)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B_LOW = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)


@dataclass
class ForwardRecord:
    """Состояния в начале каждого подшага; states[k] - список для интервала k"""

    states: List[List[np.ndarray]] = field(default_factory=list)


class TransportIntegrator:
    """Интегратор для фиксированных V, D и sigma на одной сетке"""

    def __init__(self, grid: Grid, v: VectorField, d: TensorField, cfg: SolverConfig,
                 sigma: Optional[np.ndarray] = None):
        check_same_grid(v, d)
        self.grid = grid
        self.v = v
        self.d = d
        self.cfg = cfg
        self.sigma = None if sigma is None else np.asarray(sigma, dtype=np.float64).reshape(-1)
        self.operator = transport_matrix(v, d, cfg.form, grid.boundary)
        self.operator_t = sparse.csr_matrix(self.operator.T)
        self.cauchy = grid.boundary is BoundaryKind.CAUCHY_PATCH
        self.interior = interior_mask(grid).reshape(-1)
        self.bound = cfl_max_dt(v, d, grid, cfg.dt, cfg.cfl_safety)
        self.n_sub, self.step = plan_substeps(self.bound, cfg)
        self.noise = NoiseProcess(cfg.seed) if cfg.stochastic else None
        logger.debug(f"Solver: CFL bound {self.bound:.4e} s, {self.n_sub} substep(s) of {self.step:.4e} s "
                    f"per interval, form={cfg.form.value}, integrator={cfg.integrator.value}")

    def _rk4(self, c: np.ndarray, h: float) -> np.ndarray:
        L = self.operator
        k1 = L @ c
        k2 = L @ (c + 0.5 * h * k1)
        k3 = L @ (c + 0.5 * h * k2)
        k4 = L @ (c + h * k3)
        return c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def _dopri_step(self, c: np.ndarray, h: float) -> Tuple[np.ndarray, float]:
        L = self.operator
        stages = []
        for row in _DP_A:
            y = c.copy()
            for coefficient, k in zip(row, stages):
                if coefficient:
                    y += h * coefficient * k
            stages.append(L @ y)
        new = c + h * sum(b * k for b, k in zip(_DP_B, stages) if b)
        error = h * sum((b - bl) * k for b, bl, k in zip(_DP_B, _DP_B_LOW, stages) if b != bl)
        scale = self.cfg.atol + self.cfg.rtol * np.maximum(np.abs(c), np.abs(new))
        return new, float(np.sqrt(np.mean((error / scale) ** 2)))

    def _boundary_values(self, boundary_frames: Optional[np.ndarray], c0: np.ndarray,
                         frame: int, fraction: float) -> np.ndarray:
        if boundary_frames is None:
            return c0[~self.interior]
        start = boundary_frames[frame].reshape(-1)[~self.interior]
        end = boundary_frames[frame + 1].reshape(-1)[~self.interior]
        return (1.0 - fraction) * start + fraction * end

    def _finish_substep(self, c: np.ndarray, frame: int, substep: int, h: float,
                        boundary_frames, c0: np.ndarray, fraction: float) -> np.ndarray:
        if self.noise is not None and self.sigma is not None:
            c = c + self.noise.increment(self.sigma, frame, substep, h)
        if self.cauchy:
            c[~self.interior] = self._boundary_values(boundary_frames, c0, frame, fraction)
        return c

    def _check(self, c: np.ndarray, reference: float, frame: int) -> None:
        if not np.all(np.isfinite(c)):
            logger.error(f"Blow-up: non-finite state in interval {frame}")
            raise BlowUpError(f"Неконечное решение на интервале {frame}")
        peak = float(np.max(np.abs(c)))
        if peak > BLOW_UP_FACTOR * reference:
            logger.error(f"Blow-up: max|C| = {peak:.3e} in interval {frame}")
            raise BlowUpError(f"max|C| = {peak:.3e} превышает {BLOW_UP_FACTOR:.0e} x {reference:.3e}")

    def run(self, c0: np.ndarray, n_frames: int, boundary_frames: Optional[np.ndarray] = None,
            record: Optional[ForwardRecord] = None) -> np.ndarray:
        """
        Интегрирование на n_frames - 1 интервалов dt.

        Args:
            c0: Начальное состояние (*shape)
            n_frames: Число выходных кадров, включая c0
            boundary_frames: Кадры для граничного условия Коши (n_frames, *shape)
            record: Если задан, сохраняет состояния подшагов для сопряжённого прохода

        Returns:
            np.ndarray: Кадры (n_frames, *shape)
        """
        if n_frames < 2:
            raise ConfigError("Нужно минимум 2 кадра")
        if boundary_frames is not None and len(boundary_frames) < n_frames:
            raise ConfigError("Граничных кадров меньше, чем выходных")

        c_init = np.asarray(c0, dtype=np.float64).reshape(-1).copy()
        reference = max(float(np.max(np.abs(c_init))), 1.0)
        frames = np.empty((n_frames, self.grid.size))
        frames[0] = c_init
        c = c_init.copy()

        for frame in range(n_frames - 1):
            if self.cfg.integrator is Integrator.RK45_ADAPTIVE:
                c = self._run_adaptive_interval(c, frame, boundary_frames, c_init)
            else:
                interval_states = []
                for substep in range(self.n_sub):
                    if record is not None:
                        interval_states.append(c.copy())
                    c = self._rk4(c, self.step)
                    c = self._finish_substep(c, frame, substep, self.step, boundary_frames, c_init,
                                             (substep + 1) / self.n_sub)
                if record is not None:
                    record.states.append(interval_states)
                monitoring.increment_counter('solver.substeps', self.n_sub)
            self._check(c, reference, frame)
            frames[frame + 1] = c

        return frames.reshape((n_frames,) + self.grid.shape)

    def _run_adaptive_interval(self, c: np.ndarray, frame: int, boundary_frames, c0: np.ndarray) -> np.ndarray:
        elapsed, h, substep = 0.0, min(self.bound, self.cfg.dt), 0
        while elapsed < self.cfg.dt * (1 - 1e-12):
            h = min(h, self.cfg.dt - elapsed, self.bound)
            new, error = self._dopri_step(c, h)
            if error <= 1.0 or h < 1e-14:
                elapsed += h
                c = self._finish_substep(new, frame, substep, h, boundary_frames, c0, elapsed / self.cfg.dt)
                substep += 1
            factor = 5.0 if error == 0 else min(5.0, max(0.2, 0.9 * error ** -0.2))
            h = h * factor
        monitoring.increment_counter('solver.substeps', substep)
        return c

    def operator_vjp(self, mu: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Градиент <mu, L(V, D) y> по ячейкам V и уникальным элементам D.

        Returns:
            Tuple: v_cot (d, *shape), d_cot (k, *shape)
        """
        grid = self.grid
        ops = difference_operators(grid)
        if self.cauchy:
            mu = mu * self.interior
        n = grid.ndim

        grad_y = [g @ y for g in ops.gradient]
        div_t_mu = [m.T @ mu for m in ops.flux_divergence]
        pairs = TENSOR_ENTRIES[n]
        d_cot = np.zeros((len(pairs), grid.size))
        for k, (i, j) in enumerate(pairs):
            d_cot[k] = div_t_mu[i] * grad_y[j]
            if i != j:
                d_cot[k] += div_t_mu[j] * grad_y[i]

        v_cot = np.zeros((n, grid.size))
        for axis in range(n):
            face_v = ops.face_mean[axis] @ self.v.components[axis].reshape(-1)
            positive = face_v >= 0
            left, right, diff = ops.face_left[axis], ops.face_right[axis], ops.face_difference[axis]
            if self.cfg.form is AdvectionForm.CONSERVATIVE:
                face_cot = (diff @ mu) * np.where(positive, left @ y, right @ y)
            else:
                face_cot = -(diff @ y) * np.where(positive, right @ mu, left @ mu)
            v_cot[axis] = ops.face_mean[axis].T @ face_cot

        return v_cot.reshape((n,) + grid.shape), d_cot.reshape((len(pairs),) + grid.shape)

    def backward(self, record: ForwardRecord, frame_cotangents: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Дискретный сопряжённый проход через записанные подшаги RK4.

        Args:
            record: Записанные состояния прямого прохода
            frame_cotangents: dJ/dC для каждого выходного кадра (n_frames, *shape)

        Returns:
            Tuple: v_cot (d, *shape), d_cot (k, *shape)
        """
        if self.cfg.integrator is not Integrator.RK4_FIXED:
            raise ConfigError("Сопряжённый проход реализован только для RK4 с фиксированным подшагом")

        grid = self.grid
        n = grid.ndim
        v_cot = np.zeros((n,) + grid.shape)
        d_cot = np.zeros((len(TENSOR_ENTRIES[n]),) + grid.shape)
        cot = frame_cotangents.reshape(len(frame_cotangents), -1)
        lam = np.zeros(grid.size)
        h = self.step
        L, Lt = self.operator, self.operator_t

        def accumulate(mu, y):
            dv, dd = self.operator_vjp(mu, y)
            v_cot[...] += dv
            d_cot[...] += dd

        for frame in range(len(record.states) - 1, -1, -1):
            lam = lam + cot[frame + 1]
            for c in reversed(record.states[frame]):
                if self.cauchy:
                    lam = lam * self.interior

                k1 = L @ c
                y2 = c + 0.5 * h * k1
                k2 = L @ y2
                y3 = c + 0.5 * h * k2
                k3 = L @ y3
                y4 = c + h * k3

                b4 = (h / 6.0) * lam
                b3 = (h / 3.0) * lam
                b2 = (h / 3.0) * lam
                b1 = (h / 6.0) * lam
                bc = lam.copy()

                by4 = Lt @ b4
                accumulate(b4, y4)
                bc += by4
                b3 = b3 + h * by4

                by3 = Lt @ b3
                accumulate(b3, y3)
                bc += by3
                b2 = b2 + 0.5 * h * by3

                by2 = Lt @ b2
                accumulate(b2, y2)
                bc += by2
                b1 = b1 + 0.5 * h * by2

                bc += Lt @ b1
                accumulate(b1, c)
                lam = bc

        return v_cot, d_cot


def integrate(c0: ScalarField, params: TransportParams, cfg: SolverConfig, n_frames: int,
              boundary_series: Optional[TimeSeries] = None) -> TimeSeries:
    """Прямой прогон: V и D строятся один раз, результат содержит n_frames кадров включая c0"""
    check_same_grid(c0, params.sigma)
    grid = c0.grid
    fields = derive(params)
    integrator = TransportIntegrator(grid, fields.v, fields.d, cfg, params.sigma.values)
    boundary_frames = None
    if boundary_series is not None:
        check_same_grid(c0, boundary_series)
        boundary_frames = boundary_series.data
    logger.info(f"Integrating {n_frames} frames: CFL bound {integrator.bound:.4e} s, "
                f"{integrator.n_sub} substep(s) per interval")
    with monitoring.timer('solver.integrate'):
        frames = integrator.run(c0.values, n_frames, boundary_frames)
    return TimeSeries(grid, cfg.dt, frames)


@dataclass(frozen=True)
class WellposednessReport:
    """Оценки констант условий Липшица и роста (носят рекомендательный характер)"""

    lipschitz: float
    growth: float
    n_pairs: int

    def as_dict(self) -> dict:
        return {'lipschitz': self.lipschitz, 'growth': self.growth, 'n_pairs': self.n_pairs}


def _tensor_frobenius_sq(entries: np.ndarray, ndim: int) -> np.ndarray:
    total = np.zeros(entries.shape[1:])
    for k, (i, j) in enumerate(TENSOR_ENTRIES[ndim]):
        total += (1.0 if i == j else 2.0) * entries[k] ** 2
    return total


def wellposedness_report(params: TransportParams) -> WellposednessReport:
    """
    Дискретные константы:
    Lipschitz = max по соседним парам (|dV|^2 + |dD|^2 + |dsigma|^2) / |dx|^2,
    growth = max по ячейкам (|V|^2 + |D|^2 + |sigma|^2) / (1 + |x|^2).
    """
    grid = params.grid
    fields = derive(params)
    v, d, sigma = fields.v.components, fields.d.entries, fields.sigma.values

    lipschitz, n_pairs = 0.0, 0
    for axis, h in enumerate(grid.spacing):
        upper = tuple(slice(1, None) if a == axis else slice(None) for a in range(grid.ndim))
        lower = tuple(slice(None, -1) if a == axis else slice(None) for a in range(grid.ndim))
        dv = np.sum((v[(slice(None),) + upper] - v[(slice(None),) + lower]) ** 2, axis=0)
        dd = _tensor_frobenius_sq(d[(slice(None),) + upper] - d[(slice(None),) + lower], grid.ndim)
        ds = (sigma[upper] - sigma[lower]) ** 2
        ratio = (dv + dd + ds) / h ** 2
        n_pairs += ratio.size
        lipschitz = max(lipschitz, float(np.max(ratio)))

    radius_sq = np.sum(cell_coordinates(grid) ** 2, axis=0)
    magnitude = np.sum(v ** 2, axis=0) + _tensor_frobenius_sq(d, grid.ndim) + sigma ** 2
    growth = float(np.max(magnitude / (1.0 + radius_sq)))

    logger.info(f"Well-posedness: Lipschitz={lipschitz:.4e}, growth={growth:.4e} over {n_pairs} pairs")
    return WellposednessReport(lipschitz=lipschitz, growth=growth, n_pairs=n_pairs)
