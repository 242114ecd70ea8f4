"""
Обратная задача: восстановление TransportParams по наблюдаемому ряду.

Оптимизация идёт по "сырым" блокам без ограничений:
    psi, b          - без преобразования,
    rho_lambda      - Λ = softplus(rho),
    rho_a           - A = eps_A + (1 - eps_A) * sigmoid(rho),
    rho_sigma       - σ = softplus(rho).
Градиент L_CC считается дискретным сопряжённым проходом через подшаги RK4,
окна обрабатываются параллельно и суммируются попарно в фиксированном порядке.

В transport-informed режиме без начального приближения сначала идёт разгон: L-BFGS-B по
пространственно постоянным полям (линейный Psi, постоянные B и Λ), затем
Adam уточняет поля в каждой ячейке.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit

import config
from fields.models import BoundaryKind, Grid, TimeSeries
from fields.operators import cell_coordinates
from services.losses import (
    FitMode, LossPieces, loss_cc_with_grad, loss_sigma_with_grad, loss_ss_with_grad,
    loss_ul_with_grad, loss_vd_with_grad, total_loss,
)
from services.monitoring import monitoring
from services.representation import DerivedFields, TransportParams, derive, diffusion_vjp, n_skew, velocity_vjp
from services.solver import AdvectionForm, ForwardRecord, SolverConfig, TransportIntegrator
from utils.exceptions import ConfigError, FitDivergedError, FitStalledError
from utils.validators import validate_fit_config

logger = logging.getLogger(__name__)

RAW_BLOCKS = ('psi', 'b', 'rho_lambda', 'rho_a', 'rho_sigma')

# Границы обратных отображений, чтобы сырые значения оставались конечными
POSITIVE_FLOOR = 1e-8
ANOMALY_MARGIN = 1e-6

# Разгон: перенос и диффузионная длина за кадр не больше стольких ячеек
WARM_START_REACH = 4.0


@dataclass(frozen=True)
class FitConfig:
    mode: FitMode = FitMode.TRANSPORT_INFORMED
    w_ul: float = 0.5
    w_ss: float = 0.1
    w_sigma: float = 0.5
    n_in: int = 10
    n_out: int = 10
    max_iters: int = 300
    step_size: float = 1e-2
    window_stride: Optional[int] = None
    stall_tolerance: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    form: AdvectionForm = AdvectionForm.INCOMPRESSIBLE
    substep: Optional[float] = None
    cfl_safety: float = 0.8
    epsilon_a: float = config.EPSILON_A
    init_lambda: float = 0.5
    init_a: float = 0.95
    init_sigma: float = 0.01
    init_psi_scale: float = 1e-2
    warm_start: bool = True
    warm_start_iters: int = 100
    grad_check: bool = True
    seed: int = 0
    log_every: int = 10

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, 'mode', FitMode(self.mode))
        if isinstance(self.form, str):
            object.__setattr__(self, 'form', AdvectionForm(self.form))
        ok, message = validate_fit_config(self)
        if not ok:
            raise ConfigError(message)

    @property
    def stride(self) -> int:
        """По умолчанию соседние окна делят один кадр"""
        return self.window_stride if self.window_stride is not None else self.n_in - 1

    @property
    def first_supervised(self) -> int:
        """Индекс первого контролируемого кадра окна; начальный кадр не контролируется"""
        return max(1, self.n_in - self.n_out)


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def softplus_inverse(y: np.ndarray) -> np.ndarray:
    y = np.maximum(y, POSITIVE_FLOOR)
    return y + np.log(-np.expm1(-y))


@dataclass
class RawParams:
    """Блоки сырых параметров на сетке grid"""

    grid: Grid
    blocks: Dict[str, np.ndarray]
    epsilon_a: float = config.EPSILON_A

    @classmethod
    def from_params(cls, params: TransportParams, epsilon_a: float = config.EPSILON_A) -> 'RawParams':
        a = np.clip(params.anomaly.values, epsilon_a + ANOMALY_MARGIN, 1.0 - ANOMALY_MARGIN)
        return cls(params.grid, {
            'psi': np.array(params.potential.array, dtype=np.float64),
            'b': np.array(params.spectral.b, dtype=np.float64),
            'rho_lambda': softplus_inverse(params.spectral.lam),
            'rho_a': logit((a - epsilon_a) / (1.0 - epsilon_a)),
            'rho_sigma': softplus_inverse(params.sigma.values),
        }, epsilon_a)

    @classmethod
    def initial(cls, grid: Grid, cfg: FitConfig) -> 'RawParams':
        """
        Старт: почти нулевой поток, изотропная диффузия init_lambda, A = init_a, малая σ.

        Psi - малый шум с зерном cfg.seed: при V ≡ 0 все грани стоят в точке
        переключения противопоточной схемы, и проверка градиента теряет смысл.
        """
        psi_shape = grid.shape if grid.ndim == 2 else (3,) + grid.shape
        rng = np.random.default_rng(cfg.seed)
        params = TransportParams.from_arrays(
            grid,
            cfg.init_psi_scale * rng.standard_normal(psi_shape),
            np.zeros((n_skew(grid.ndim),) + grid.shape),
            np.full((grid.ndim,) + grid.shape, cfg.init_lambda),
            np.full(grid.shape, cfg.init_a),
            np.full(grid.shape, cfg.init_sigma),
        )
        return cls.from_params(params, cfg.epsilon_a)

    def to_params(self) -> TransportParams:
        eps = self.epsilon_a
        return TransportParams.from_arrays(
            self.grid,
            self.blocks['psi'],
            self.blocks['b'],
            softplus(self.blocks['rho_lambda']),
            eps + (1.0 - eps) * expit(self.blocks['rho_a']),
            softplus(self.blocks['rho_sigma']),
        )

    def shifted(self, direction: Dict[str, np.ndarray], scale: float) -> 'RawParams':
        return RawParams(self.grid, {k: self.blocks[k] + scale * direction[k] for k in RAW_BLOCKS}, self.epsilon_a)


def raw_cotangents(params: TransportParams, epsilon_a: float, psi_cot, b_cot, lam_cot, a_cot,
                   sigma_cot) -> Dict[str, np.ndarray]:
    """
    Перевод котангенсов ограниченных параметров в котангенсы сырых блоков.

    Производные отображений выражены через их значения:
    softplus' = 1 - exp(-y), для A: (A - eps)(1 - A) / (1 - eps).
    """
    lam = params.spectral.lam
    a = params.anomaly.values
    sigma = params.sigma.values
    return {
        'psi': psi_cot,
        'b': b_cot,
        'rho_lambda': lam_cot * -np.expm1(-lam),
        'rho_a': a_cot * (a - epsilon_a) * (1.0 - a) / (1.0 - epsilon_a),
        'rho_sigma': sigma_cot * -np.expm1(-sigma),
    }


def pairwise_sum(items: Sequence):
    """Попарная свёртка в фиксированном порядке"""
    if len(items) == 1:
        return items[0]
    middle = len(items) // 2
    left = pairwise_sum(items[:middle])
    right = pairwise_sum(items[middle:])
    if isinstance(left, tuple):
        return tuple(a + b for a, b in zip(left, right))
    return left + right


def window_starts(n_frames: int, cfg: FitConfig) -> List[int]:
    """Начала окон длиной n_in с шагом stride; последнее окно всегда доходит до конца ряда"""
    if cfg.n_in > n_frames:
        raise ConfigError(f"Окно n_in = {cfg.n_in} длиннее ряда из {n_frames} кадров")
    last = n_frames - cfg.n_in
    starts = list(range(0, last + 1, cfg.stride))
    if starts[-1] != last:
        starts.append(last)
    return starts


@dataclass
class Evaluation:
    loss: float
    pieces: LossPieces
    grads: Optional[Dict[str, np.ndarray]] = None
    smoothness_grads: Optional[Dict[str, np.ndarray]] = None


def _empty_cotangents(grid: Grid, fields: DerivedFields) -> Dict[str, Optional[np.ndarray]]:
    zeros_v = np.zeros((grid.ndim,) + grid.shape)
    zeros_d = np.zeros_like(fields.d.entries)
    return {
        'v_bar': zeros_v.copy(), 'v': zeros_v.copy(), 'd_bar': zeros_d.copy(), 'd': zeros_d.copy(),
        'a': np.zeros(grid.shape), 'sigma': np.zeros(grid.shape), 'u': None, 'lam': None,
    }


def _raw_gradient(params: TransportParams, cot: Dict[str, Optional[np.ndarray]],
                  epsilon_a: float) -> Dict[str, np.ndarray]:
    psi_cot, a_from_v = velocity_vjp(params, cot['v_bar'], cot['v'])
    b_cot, lam_cot, a_from_d = diffusion_vjp(params, cot['d_bar'], cot['d'], cot['u'], cot['lam'])
    a_cot = cot['a'] + a_from_v + a_from_d
    return raw_cotangents(params, epsilon_a, psi_cot, b_cot, lam_cot, a_cot, cot['sigma'])


class FitObjective:
    """Функция потерь и её градиент по сырым параметрам для одного наблюдаемого ряда"""

    def __init__(self, observed: TimeSeries, cfg: FitConfig, truth: Optional[TransportParams] = None):
        if cfg.mode is FitMode.PHYSICS_INFORMED and truth is None:
            raise ConfigError("Режим physics-informed требует истинных параметров (--truth)")
        if truth is not None and not truth.grid.same_domain(observed.grid):
            raise ConfigError("Сетка истинных параметров не совпадает с сеткой ряда")
        self.observed = observed
        self.cfg = cfg
        self.truth = truth
        self.truth_fields = derive(truth) if truth is not None else None
        self.sigma_active = truth is not None
        self.solver_cfg = SolverConfig(dt=observed.dt, substep=cfg.substep, cfl_safety=cfg.cfl_safety,
                                       form=cfg.form, stochastic=False)
        self.patch_grid = observed.grid.with_boundary(BoundaryKind.CAUCHY_PATCH)
        self.starts = window_starts(observed.n_frames, cfg) if cfg.mode is FitMode.TRANSPORT_INFORMED else []

    def _window(self, integrator: TransportIntegrator, start: int, need_grad: bool):
        """Прогон n_in кадров окна; в L_CC входят последние кадры начиная с first_supervised"""
        cfg = self.cfg
        window = self.observed.window(start, cfg.n_in)
        record = ForwardRecord() if need_grad else None
        predicted = integrator.run(window.data[0], cfg.n_in, boundary_frames=window.data, record=record)
        value, cot = loss_cc_with_grad(window, TimeSeries(window.grid, window.dt, predicted), cfg.first_supervised)
        if not need_grad:
            return value, None, None
        scale = 1.0 / len(self.starts)
        v_cot, d_cot = integrator.backward(record, cot['frames'] * scale)
        return value, v_cot, d_cot

    def _concentration_term(self, fields, need_grad: bool):
        integrator = TransportIntegrator(self.patch_grid, fields.v, fields.d, self.solver_cfg)
        workers = min(config.ADPF_THREADS, len(self.starts))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda s: self._window(integrator, s, need_grad), self.starts))
        else:
            results = [self._window(integrator, s, need_grad) for s in self.starts]

        value = pairwise_sum([r[0] for r in results]) / len(results)
        if not need_grad:
            return value, None, None
        v_cot, d_cot = pairwise_sum([(r[1], r[2]) for r in results])
        return value, v_cot, d_cot

    def evaluate(self, raw: RawParams, need_grad: bool = True) -> Evaluation:
        return self.evaluate_params(raw.to_params(), need_grad)

    def evaluate_params(self, params: TransportParams, need_grad: bool = True) -> Evaluation:
        monitoring.increment_counter('inverse.loss_evaluations')
        cfg = self.cfg
        fields = derive(params)
        grid = params.grid
        cot = _empty_cotangents(grid, fields)

        if cfg.mode is FitMode.PHYSICS_INFORMED:
            vd, vd_cot = loss_vd_with_grad(self.truth_fields, fields)
            ul, ul_cot = loss_ul_with_grad(self.truth_fields.u, self.truth_fields.lam, fields.u, fields.lam)
            pieces = LossPieces(vd=vd, ul=ul)
            for key in ('v_bar', 'v', 'd_bar', 'd', 'a'):
                cot[key] += vd_cot[key]
            cot['u'] = cfg.w_ul * ul_cot['u']
            cot['lam'] = cfg.w_ul * ul_cot['lam']
            loss = total_loss(cfg.mode, pieces, cfg)
            if not need_grad:
                return Evaluation(loss, pieces)
            return Evaluation(loss, pieces, _raw_gradient(params, cot, cfg.epsilon_a))

        cc, v_cc, d_cc = self._concentration_term(fields, need_grad)
        ss, ss_cot = loss_ss_with_grad(fields.v, fields.d)
        sigma_value = None
        if self.sigma_active:
            sigma_value, sigma_cot = loss_sigma_with_grad(self.truth.anomaly, params.sigma)
            cot['sigma'] += cfg.w_sigma * sigma_cot['sigma']
        pieces = LossPieces(cc=cc, ss=ss, sigma=sigma_value)
        loss = total_loss(cfg.mode, pieces, cfg)
        if not need_grad:
            return Evaluation(loss, pieces)

        cot['v'] += v_cc
        cot['d'] += d_cc
        grads = _raw_gradient(params, cot, cfg.epsilon_a)
        smooth_cot = _empty_cotangents(grid, fields)
        smooth_cot['v'] += cfg.w_ss * ss_cot['v']
        smooth_cot['d'] += cfg.w_ss * ss_cot['d']
        smoothness = _raw_gradient(params, smooth_cot, cfg.epsilon_a)
        grads = {name: grads[name] + smoothness[name] for name in RAW_BLOCKS}
        return Evaluation(loss, pieces, grads, smoothness)


def gradient(params: TransportParams, observed: TimeSeries, cfg: FitConfig,
             truth: Optional[TransportParams] = None) -> Tuple[float, Dict[str, np.ndarray]]:
    """Значение функции потерь и градиент по всем сырым блокам в точке params"""
    objective = FitObjective(observed, cfg, truth)
    evaluation = objective.evaluate_params(params)
    _check_finite(evaluation)
    return evaluation.loss, evaluation.grads


def _check_finite(evaluation: Evaluation) -> None:
    if not np.isfinite(evaluation.loss):
        raise FitDivergedError(f"Функция потерь неконечна: {evaluation.loss}")
    for name in RAW_BLOCKS:
        if not np.all(np.isfinite(evaluation.grads[name])):
            raise FitDivergedError(f"Неконечный градиент в блоке {name}", block=name)


def gradient_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(grads[name] ** 2) for name in RAW_BLOCKS)))


def check_gradient(objective: FitObjective, raw: RawParams, seed: int = 0, step: float = 1e-5,
                   evaluation: Optional[Evaluation] = None) -> float:
    """
    Относительная ошибка производной по случайному направлению:
    сопряжённый градиент против центральной конечной разности.
    """
    rng = np.random.default_rng(seed)
    direction = {name: rng.standard_normal(raw.blocks[name].shape) for name in RAW_BLOCKS}
    length = np.sqrt(sum(np.sum(d ** 2) for d in direction.values()))
    direction = {name: d / length for name, d in direction.items()}

    evaluation = evaluation or objective.evaluate(raw)
    analytic = float(sum(np.sum(evaluation.grads[name] * direction[name]) for name in RAW_BLOCKS))
    plus = objective.evaluate(raw.shifted(direction, step), need_grad=False).loss
    minus = objective.evaluate(raw.shifted(direction, -step), need_grad=False).loss
    numeric = (plus - minus) / (2.0 * step)
    error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
    logger.info(f"Gradient check: adjoint={analytic:.6e}, finite difference={numeric:.6e}, relative error={error:.3e}")
    return error


class GlobalFields:
    """
    Подсемейство сырых параметров с постоянными V и D̄: Psi линеен по координатам,
    B и rho_lambda одинаковы во всех ячейках, rho_a и rho_sigma берутся из base.

    Вектор theta: наклоны Psi (строка на компоненту потенциала), затем B, затем rho_lambda.
    """

    def __init__(self, base: RawParams):
        grid = base.grid
        self.base = base
        self.grid = grid
        coords = cell_coordinates(grid)
        center = coords.reshape(grid.ndim, -1).mean(axis=1)
        self.offsets = coords - center.reshape((grid.ndim,) + (1,) * grid.ndim)
        self.n_rows = 1 if grid.ndim == 2 else 3
        self.n_psi = self.n_rows * grid.ndim
        self.n_b = n_skew(grid.ndim)
        self.size = self.n_psi + self.n_b + grid.ndim

    @property
    def _spatial_axes(self) -> List[int]:
        return list(range(1, 1 + self.grid.ndim))

    def _split(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=np.float64)
        slopes = theta[:self.n_psi].reshape(self.n_rows, self.grid.ndim)
        return slopes, theta[self.n_psi:self.n_psi + self.n_b], theta[self.n_psi + self.n_b:]

    def _broadcast(self, values: np.ndarray) -> np.ndarray:
        return np.broadcast_to(values.reshape((-1,) + (1,) * self.grid.ndim),
                               (values.size,) + self.grid.shape).copy()

    def expand(self, theta: np.ndarray) -> RawParams:
        slopes, b, rho_lambda = self._split(theta)
        psi = np.tensordot(slopes, self.offsets, axes=1)
        blocks = dict(self.base.blocks)
        blocks['psi'] = psi[0] if self.grid.ndim == 2 else psi
        blocks['b'] = self._broadcast(b)
        blocks['rho_lambda'] = self._broadcast(rho_lambda)
        return RawParams(self.grid, blocks, self.base.epsilon_a)

    def _psi_rows(self, psi: np.ndarray) -> np.ndarray:
        return psi[None] if self.grid.ndim == 2 else psi

    def reduce(self, grads: Dict[str, np.ndarray]) -> np.ndarray:
        """Градиент по theta: сопряжение линейного отображения expand"""
        axes = self._spatial_axes
        slopes = np.tensordot(self._psi_rows(grads['psi']), self.offsets, axes=(axes, axes))
        b = grads['b'].reshape(self.n_b, -1).sum(axis=1)
        rho_lambda = grads['rho_lambda'].reshape(self.grid.ndim, -1).sum(axis=1)
        return np.concatenate([slopes.reshape(-1), b, rho_lambda])

    def project(self, raw: RawParams) -> np.ndarray:
        """Ближайшая по МНК точка семейства; смещения по осям ортогональны на полной сетке"""
        axes = self._spatial_axes
        norms = np.sum(self.offsets ** 2, axis=tuple(axes))
        slopes = np.tensordot(self._psi_rows(raw.blocks['psi']), self.offsets, axes=(axes, axes)) / norms
        b = raw.blocks['b'].reshape(self.n_b, -1).mean(axis=1)
        rho_lambda = raw.blocks['rho_lambda'].reshape(self.grid.ndim, -1).mean(axis=1)
        return np.concatenate([slopes.reshape(-1), b, rho_lambda])

    def bounds(self, dt: float) -> List[Tuple[Optional[float], Optional[float]]]:
        """За кадр dt перенос и диффузионная длина не превышают WARM_START_REACH ячеек"""
        h = min(self.grid.spacing)
        slope_limit = WARM_START_REACH * h / dt
        lambda_limit = float(softplus_inverse(WARM_START_REACH * h ** 2 / dt))
        return ([(-slope_limit, slope_limit)] * self.n_psi + [(None, None)] * self.n_b
                + [(None, lambda_limit)] * self.grid.ndim)


def warm_start(objective: FitObjective, raw: RawParams) -> Tuple[RawParams, float]:
    """
    Разгон L-BFGS-B по пространственно постоянным полям вокруг raw.

    Returns:
        Tuple[RawParams, float]: лучшая встреченная точка семейства и её потери
    """
    family = GlobalFields(raw)
    bounds = family.bounds(objective.observed.dt)
    lower = np.array([-np.inf if lo is None else lo for lo, _ in bounds])
    upper = np.array([np.inf if hi is None else hi for _, hi in bounds])
    best = {'loss': np.inf, 'theta': None}

    def value_and_gradient(theta: np.ndarray) -> Tuple[float, np.ndarray]:
        evaluation = objective.evaluate(family.expand(theta))
        _check_finite(evaluation)
        if evaluation.loss < best['loss']:
            best['loss'], best['theta'] = float(evaluation.loss), np.array(theta, dtype=np.float64)
        return float(evaluation.loss), family.reduce(evaluation.grads)

    start = np.clip(family.project(raw), lower, upper)
    with monitoring.timer('inverse.warm_start'):
        outcome = minimize(value_and_gradient, start, jac=True, method='L-BFGS-B', bounds=bounds,
                           options={'maxiter': objective.cfg.warm_start_iters, 'ftol': 1e-15, 'gtol': 1e-12})
    logger.info(f"Warm start finished: loss={best['loss']:.6e}, iterations={outcome.nit}, "
                f"evaluations={outcome.nfev}, status: {outcome.message}")
    return family.expand(best['theta']), best['loss']


class Adam:
    """Адаптивный шаг с моментами первого и второго порядка по каждому элементу"""

    def __init__(self, step_size: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.step_size = step_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, raw: RawParams, grads: Dict[str, np.ndarray]) -> RawParams:
        self.t += 1
        blocks = {}
        for name in RAW_BLOCKS:
            g = grads[name]
            m = self.beta1 * self.m.get(name, np.zeros_like(g)) + (1 - self.beta1) * g
            v = self.beta2 * self.v.get(name, np.zeros_like(g)) + (1 - self.beta2) * g ** 2
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - self.beta1 ** self.t)
            v_hat = v / (1 - self.beta2 ** self.t)
            blocks[name] = raw.blocks[name] - self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)
        return RawParams(raw.grid, blocks, raw.epsilon_a)


@dataclass
class FitResult:
    params_hat: TransportParams
    loss_trace: List[float] = field(default_factory=list)
    grad_norm_trace: List[float] = field(default_factory=list)
    best_iteration: int = 0
    best_pieces: Optional[LossPieces] = None
    grad_check: Optional[float] = None
    sigma_active: bool = False
    warm_start_loss: Optional[float] = None

    @property
    def best_loss(self) -> float:
        return self.loss_trace[self.best_iteration]

    def log_rows(self) -> List[dict]:
        return [{'iteration': i, 'loss': loss, 'grad_norm': norm}
                for i, (loss, norm) in enumerate(zip(self.loss_trace, self.grad_norm_trace))]


def fit(observed: TimeSeries, cfg: FitConfig, truth: Optional[TransportParams] = None,
        init: Optional[TransportParams] = None) -> FitResult:
    """
    Оптимизация Adam по сырым параметрам; возвращает лучшие по потерям параметры.

    Без init в transport-informed режиме Adam стартует из точки разгона (warm_start),
    если разгон уменьшил потери стартового приближения.

    Args:
        observed: Наблюдаемый ряд
        cfg: Настройки обратной задачи
        truth: Истинные параметры (обязательны в physics-informed режиме, включают L_σ)
        init: Начальное приближение (по умолчанию RawParams.initial)
    """
    objective = FitObjective(observed, cfg, truth)
    if cfg.mode is FitMode.TRANSPORT_INFORMED and not objective.sigma_active:
        logger.warning("L_sigma inactive: no ground-truth anomaly field supplied, sigma is not trained")

    raw = RawParams.from_params(init, cfg.epsilon_a) if init is not None else RawParams.initial(observed.grid, cfg)
    result = FitResult(params_hat=raw.to_params(), sigma_active=objective.sigma_active)

    if (init is None and cfg.warm_start and cfg.warm_start_iters > 0
            and cfg.mode is FitMode.TRANSPORT_INFORMED):
        initial_loss = objective.evaluate(raw, need_grad=False).loss
        warm_raw, warm_loss = warm_start(objective, raw)
        if warm_loss < initial_loss:
            raw = warm_raw
            result.warm_start_loss = warm_loss
        else:
            logger.warning(f"Warm start did not lower the initial loss {initial_loss:.6e}, keeping the initial guess")

    optimizer = Adam(cfg.step_size, cfg.beta1, cfg.beta2, cfg.adam_eps)
    best_raw, best_loss = raw, np.inf

    logger.info(f"Fit started: mode={cfg.mode.value}, windows={len(objective.starts)}, max_iters={cfg.max_iters}")
    with monitoring.timer('inverse.fit'):
        for iteration in range(cfg.max_iters + 1):
            evaluation = objective.evaluate(raw)
            _check_finite(evaluation)
            if iteration == 0 and cfg.grad_check:
                result.grad_check = check_gradient(objective, raw, cfg.seed, evaluation=evaluation)

            norm = gradient_norm(evaluation.grads)
            result.loss_trace.append(evaluation.loss)
            result.grad_norm_trace.append(norm)
            if evaluation.loss < best_loss:
                best_raw, best_loss = raw, evaluation.loss
                result.best_iteration = iteration
                result.best_pieces = evaluation.pieces

            if iteration % cfg.log_every == 0 or iteration == cfg.max_iters:
                logger.info(f"Iteration {iteration}: loss={evaluation.loss:.6e}, grad_norm={norm:.3e}")
            if iteration == cfg.max_iters:
                break
            raw = optimizer.step(raw, evaluation.grads)

    stalled = result.best_iteration == 0 and result.warm_start_loss is None and best_loss > cfg.stall_tolerance
    if cfg.max_iters > 0 and stalled:
        raise FitStalledError(f"Ни одна из {cfg.max_iters} итераций не улучшила потери {best_loss:.6e}")

    result.params_hat = best_raw.to_params()
    logger.info(f"Fit finished: best loss {best_loss:.6e} at iteration {result.best_iteration}")
    return result
