"""
Синтетические данные: движущийся анизотропный гауссиан со случайными аномалиями.

Образец i корпуса использует генератор numpy.random.default_rng(seed + i),
поэтому каждый образец воспроизводим независимо от остальных.
"""
import logging
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from config import EPSILON_A
from fields.models import BoundaryKind, Grid, ScalarField, TimeSeries
from fields.operators import cell_coordinates
from services.representation import AnomalyField, TransportParams
from services.solver import AdvectionForm, SolverConfig, integrate
from utils.exceptions import ConfigError
from utils.validators import validate_protocol

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimProtocol:
    name: str = '2d-gaussian'
    shape: Tuple[int, ...] = (64, 64)
    spacing: Tuple[float, ...] = (1.0, 1.0)
    n_frames: int = 40
    dt: float = 0.01
    lambda_range: Tuple[float, float] = (0.0, 1.0)
    psi_range: Tuple[float, float] = (-10.0, 10.0)
    anomaly_prob: float = 0.5
    init_std: float = 2.0
    depth_range: Tuple[float, float] = (0.3, 0.95)
    anomaly_std_range: Tuple[float, float] = (2.0, 16.0)
    boundary: BoundaryKind = BoundaryKind.NEUMANN_ZERO_FLUX
    form: AdvectionForm = AdvectionForm.INCOMPRESSIBLE
    stochastic: bool = True
    epsilon_a: float = EPSILON_A

    def __post_init__(self):
        if isinstance(self.form, str):
            object.__setattr__(self, 'form', AdvectionForm(self.form))
        if isinstance(self.boundary, str):
            object.__setattr__(self, 'boundary', BoundaryKind(self.boundary))
        ok, message = validate_protocol(self)
        if not ok:
            raise ConfigError(message)

    @property
    def grid(self) -> Grid:
        return Grid(tuple(self.shape), tuple(self.spacing), self.boundary)

    def solver_config(self, seed: int) -> SolverConfig:
        return SolverConfig(dt=self.dt, form=self.form, stochastic=self.stochastic, seed=int(seed))


PROTOCOLS = {
    '2d-gaussian': SimProtocol(),
    '3d-gaussian': SimProtocol(name='3d-gaussian', shape=(32, 32, 32), spacing=(1.0, 1.0, 1.0)),
}


def get_protocol(name: str, **overrides) -> SimProtocol:
    if name not in PROTOCOLS:
        raise ConfigError(f"Неизвестный протокол {name!r}, доступны: {', '.join(sorted(PROTOCOLS))}")
    base = PROTOCOLS[name]
    if not overrides:
        return base
    values = {key: getattr(base, key) for key in base.__dataclass_fields__}
    values.update(overrides)
    return SimProtocol(**values)


@dataclass(frozen=True, eq=False)
class SimSample:
    params: TransportParams
    series: TimeSeries
    has_anomaly: bool
    seed: Optional[int] = None


def _inside(grid: Grid, point: Sequence[float]) -> bool:
    return all(0.0 <= p <= e for p, e in zip(point, grid.extent))


def gaussian_initial(grid: Grid, center: Sequence[float], std: float) -> ScalarField:
    """C0(x) = exp(-|x - center|^2 / (2 std^2)), пик равен 1"""
    if std <= 0:
        raise ConfigError(f"Ширина гауссиана должна быть положительной, получено {std}")
    if len(center) != grid.ndim or not _inside(grid, center):
        raise ConfigError(f"Центр {tuple(center)} вне области {grid.extent}")

    coords = cell_coordinates(grid)
    offset = coords - np.asarray(center, dtype=np.float64).reshape((grid.ndim,) + (1,) * grid.ndim)
    return ScalarField(grid, np.exp(-np.sum(offset ** 2, axis=0) / (2.0 * std ** 2)))


def _smooth(array: np.ndarray, spatial_ndim: int) -> np.ndarray:
    """Один проход трёхточечного усреднения по каждой пространственной оси"""
    size = (1,) * (array.ndim - spatial_ndim) + (3,) * spatial_ndim
    return uniform_filter(array, size=size, mode='nearest')


def _dominant_direction(ndim: int, rng: np.random.Generator) -> np.ndarray:
    """Коэффициенты генератора поворота для одного направления на весь образец"""
    theta = rng.uniform(0.0, 2.0 * np.pi)
    if ndim == 2:
        return np.array([theta])

    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    # Коэффициенты стоят в K[1,0], K[2,0], K[2,1]; K = theta * [axis]_x
    return theta * np.array([axis[2], -axis[1], axis[0]])


def random_potentials(protocol: SimProtocol, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Случайные Psi, B, Lambda со сглаживанием; B постоянен по области"""
    grid = protocol.grid
    d = grid.ndim
    psi_shape = grid.shape if d == 2 else (3,) + grid.shape

    psi = rng.uniform(*protocol.psi_range, size=psi_shape)
    lam = rng.uniform(*protocol.lambda_range, size=(d,) + grid.shape)
    coefficients = _dominant_direction(d, rng)
    b = np.broadcast_to(coefficients.reshape((-1,) + (1,) * d), (len(coefficients),) + grid.shape).copy()

    psi = _smooth(psi, d)
    lam = _smooth(lam, d)
    return psi, b, lam


def anomaly_field(grid: Grid, rng: np.random.Generator, protocol: Optional[SimProtocol] = None) -> AnomalyField:
    """A(x) = 1 - a0 exp(-1/2 (x-c)^T S^-1 (x-c)) с диагональной S, обрезанное до [eps_A, 1]"""
    protocol = protocol or PROTOCOLS['2d-gaussian']
    depth = rng.uniform(*protocol.depth_range)
    center = np.array([rng.uniform(0.0, e) for e in grid.extent])
    std = rng.uniform(*protocol.anomaly_std_range, size=grid.ndim)

    coords = cell_coordinates(grid)
    scaled = (coords - center.reshape((grid.ndim,) + (1,) * grid.ndim)) / std.reshape((grid.ndim,) + (1,) * grid.ndim)
    values = 1.0 - depth * np.exp(-0.5 * np.sum(scaled ** 2, axis=0))
    return AnomalyField(ScalarField(grid, np.clip(values, protocol.epsilon_a, 1.0)))


def make_sample(protocol: SimProtocol, rng: np.random.Generator) -> SimSample:
    """Один образец: истинные параметры (с sigma = 1 - A) и прямой прогон на n_frames кадров"""
    grid = protocol.grid
    psi, b, lam = random_potentials(protocol, rng)

    has_anomaly = bool(rng.random() < protocol.anomaly_prob)
    if has_anomaly:
        anomaly = anomaly_field(grid, rng, protocol)
    else:
        anomaly = AnomalyField.normal(grid)
    a = anomaly.values
    params = TransportParams.from_arrays(grid, psi, b, lam, a, 1.0 - a)

    # Центр - в средней половине области
    center = [rng.uniform(0.25 * e, 0.75 * e) for e in grid.extent]
    c0 = gaussian_initial(grid, center, protocol.init_std)
    noise_seed = int(rng.integers(0, 2 ** 63))

    series = integrate(c0, params, protocol.solver_config(noise_seed), protocol.n_frames)
    logger.debug(f"Sample generated: anomaly={has_anomaly}, center={center}")
    return SimSample(params=params, series=series, has_anomaly=has_anomaly)


def make_corpus(protocol: SimProtocol, n: int, seed: int) -> Iterator[SimSample]:
    """Образцы с зёрнами seed, seed + 1, ..., seed + n - 1"""
    if n < 1:
        raise ConfigError("Размер корпуса должен быть положительным")
    for index in range(n):
        sample_seed = seed + index
        sample = make_sample(protocol, np.random.default_rng(sample_seed))
        yield SimSample(params=sample.params, series=sample.series,
                        has_anomaly=sample.has_anomaly, seed=sample_seed)
