"""
Параметризации, удовлетворяющие ограничениям по построению.

Скорость: V = curl(A·Psi), "безаномальная" скорость V̄ = curl(Psi); обе бездивергентны.
Диффузия: D̄ = U Λ Uᵀ, U = exp(K) ∈ SO(d), D = A·D̄; обе симметричны и неотрицательно определены.

Генератор K кососимметричен, коэффициенты B стоят в нижнем треугольнике
(K = Bᵀ - B при верхнетреугольной B); в 2D это поворот против часовой стрелки на b₁.
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from fields.models import TENSOR_ENTRIES, Grid, ScalarField, TensorField, VectorField, check_same_grid
from fields.operators import curl_array, curl_transpose
from fields.storage import read_array, read_meta, write_array, write_meta
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

# Пары (строка, столбец) нижнего треугольника генератора, по порядку коэффициентов b
SKEW_ENTRIES = {
    2: ((1, 0),),
    3: ((1, 0), (2, 0), (2, 1)),
}

# Ниже этого угла функции формулы Родрига считаются рядами Тейлора
_SERIES_THRESHOLD = 1e-2


def n_skew(ndim: int) -> int:
    return ndim * (ndim - 1) // 2


@dataclass(frozen=True, eq=False)
class VelocityPotential:
    psi: Union[ScalarField, VectorField]

    def __post_init__(self):
        grid = self.psi.grid
        if grid.ndim == 2 and not isinstance(self.psi, ScalarField):
            raise ConfigError("В 2D потенциал Psi должен быть скалярным (alpha = 1)")
        if grid.ndim == 3 and not isinstance(self.psi, VectorField):
            raise ConfigError("В 3D потенциал Psi должен быть векторным (alpha = 3)")
        if grid.ndim not in (2, 3):
            raise ConfigError("Потенциал скорости определён только для 2D и 3D")

    @property
    def grid(self) -> Grid:
        return self.psi.grid

    @property
    def array(self) -> np.ndarray:
        return self.psi.values if isinstance(self.psi, ScalarField) else self.psi.components


@dataclass(frozen=True, eq=False)
class DiffusionSpectralParams:
    """Коэффициенты B (строго верхний треугольник) и диагональ Λ в каждой ячейке"""

    grid: Grid
    b: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        k = n_skew(self.grid.ndim)
        b = np.array(self.b, dtype=np.float64, copy=True).reshape((k,) + self.grid.shape)
        lam = np.array(self.lam, dtype=np.float64, copy=True).reshape((self.grid.ndim,) + self.grid.shape)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(lam))):
            raise ConfigError("Спектральные параметры диффузии должны быть конечными")
        if np.any(lam < 0):
            raise ConfigError("Собственные значения Λ должны быть неотрицательными")
        b.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, 'b', b)
        object.__setattr__(self, 'lam', lam)


@dataclass(frozen=True, eq=False)
class AnomalyField:
    a: ScalarField

    def __post_init__(self):
        values = self.a.values
        if np.any(values <= 0) or np.any(values > 1):
            raise ConfigError("Значения поля аномалий A должны лежать в (0, 1]")

    @classmethod
    def normal(cls, grid: Grid) -> 'AnomalyField':
        return cls(ScalarField.constant(grid, 1.0))

    @property
    def values(self) -> np.ndarray:
        return self.a.values


@dataclass(frozen=True, eq=False)
class TransportParams:
    potential: VelocityPotential
    spectral: DiffusionSpectralParams
    anomaly: AnomalyField
    sigma: ScalarField

    def __post_init__(self):
        check_same_grid(self.potential, self.spectral, self.anomaly.a, self.sigma)
        if np.any(self.sigma.values < 0):
            raise ConfigError("Неопределённость sigma должна быть неотрицательной")

    @classmethod
    def from_arrays(cls, grid: Grid, psi, b, lam, a, sigma) -> 'TransportParams':
        if grid.ndim == 2:
            potential = VelocityPotential(ScalarField(grid, psi))
        else:
            potential = VelocityPotential(VectorField(grid, psi))
        return cls(
            potential=potential,
            spectral=DiffusionSpectralParams(grid, b, lam),
            anomaly=AnomalyField(ScalarField(grid, a)),
            sigma=ScalarField(grid, sigma),
        )

    @property
    def grid(self) -> Grid:
        return self.potential.grid

    def arrays(self) -> Dict[str, np.ndarray]:
        return {
            'psi': self.potential.array,
            'b': self.spectral.b,
            'lambda': self.spectral.lam,
            'a': self.anomaly.values,
            'sigma': self.sigma.values,
        }

    def replace(self, **arrays) -> 'TransportParams':
        """Копия с заменёнными массивами (ключи как в arrays())"""
        current = self.arrays()
        current.update(arrays)
        return TransportParams.from_arrays(
            self.grid, current['psi'], current['b'], current['lambda'], current['a'], current['sigma'])


@dataclass(frozen=True, eq=False)
class DerivedFields:
    """Поля, вычисленные из TransportParams; u - (*shape, d, d), lam - (*shape, d)"""

    v_bar: VectorField
    v: VectorField
    d_bar: TensorField
    d: TensorField
    u: np.ndarray
    lam: np.ndarray
    a: ScalarField
    sigma: ScalarField

    @property
    def grid(self) -> Grid:
        return self.v.grid


def build_velocity(params: TransportParams) -> Tuple[VectorField, VectorField]:
    """V̄ = curl(Psi) и V = curl(A·Psi), ротор берётся от произведения напрямую"""
    grid = params.grid
    psi = params.potential.array
    a = params.anomaly.values
    v_bar = VectorField(grid, curl_array(psi, grid))
    v = VectorField(grid, curl_array(a * psi, grid))
    return v_bar, v


def _generator(b: np.ndarray, ndim: int) -> np.ndarray:
    """Кососимметричный генератор (*shape, d, d) из коэффициентов (k, *shape)"""
    shape = b.shape[1:]
    k = np.zeros(shape + (ndim, ndim))
    for index, (i, j) in enumerate(SKEW_ENTRIES[ndim]):
        k[..., i, j] = b[index]
        k[..., j, i] = -b[index]
    return k


def _generator_basis(ndim: int) -> np.ndarray:
    basis = np.zeros((n_skew(ndim), ndim, ndim))
    for index, (i, j) in enumerate(SKEW_ENTRIES[ndim]):
        basis[index, i, j] = 1.0
        basis[index, j, i] = -1.0
    return basis


def _rodrigues_coefficients(theta: np.ndarray):
    """alpha, beta формулы Родрига и их производные, делённые на theta"""
    small = theta < _SERIES_THRESHOLD
    t = np.where(small, 1.0, theta)
    t2 = theta ** 2
    t4 = t2 ** 2

    alpha = np.where(small, 1 - t2 / 6 + t4 / 120, np.sin(t) / t)
    beta = np.where(small, 0.5 - t2 / 24 + t4 / 720, (1 - np.cos(t)) / t ** 2)
    d_alpha = np.where(small, -1 / 3 + t2 / 30 - t4 / 840, (t * np.cos(t) - np.sin(t)) / t ** 3)
    d_beta = np.where(small, -1 / 12 + t2 / 180 - t4 / 6720,
                      (t * np.sin(t) - 2 * (1 - np.cos(t))) / t ** 4)
    return alpha, beta, d_alpha, d_beta


def rotation_field(b: np.ndarray, ndim: int) -> np.ndarray:
    """U = exp(K) для каждой ячейки: (k, *shape) -> (*shape, d, d)"""
    b = np.asarray(b, dtype=np.float64)
    if ndim == 2:
        c, s = np.cos(b[0]), np.sin(b[0])
        return np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)
    if ndim != 3:
        raise ConfigError(f"Матричная экспонента реализована для d = 2, 3, получено {ndim}")

    k = _generator(b, 3)
    theta = np.sqrt(np.sum(b ** 2, axis=0))
    alpha, beta, _, _ = _rodrigues_coefficients(theta)
    k2 = k @ k
    return np.eye(3) + alpha[..., None, None] * k + beta[..., None, None] * k2


def rotation_derivatives(b: np.ndarray, ndim: int) -> np.ndarray:
    """Точные производные dU/db_k, массив (k, *shape, d, d)"""
    b = np.asarray(b, dtype=np.float64)
    if ndim == 2:
        c, s = np.cos(b[0]), np.sin(b[0])
        du = np.stack([np.stack([-s, -c], axis=-1), np.stack([c, -s], axis=-1)], axis=-2)
        return du[None]

    k = _generator(b, 3)
    k2 = k @ k
    theta = np.sqrt(np.sum(b ** 2, axis=0))
    alpha, beta, d_alpha, d_beta = _rodrigues_coefficients(theta)
    basis = _generator_basis(3)

    out = np.empty((3,) + b.shape[1:] + (3, 3))
    for index in range(3):
        e = basis[index]
        out[index] = (
            (d_alpha * b[index])[..., None, None] * k
            + alpha[..., None, None] * e
            + (d_beta * b[index])[..., None, None] * k2
            + beta[..., None, None] * (e @ k + k @ e)
        )
    return out


def matrix_exp_skew(b_cell, ndim: int) -> np.ndarray:
    """Ортогональная матрица exp(K) для одной ячейки (d = 2: поворот, d = 3: формула Родрига)"""
    if ndim not in (2, 3):
        raise ConfigError(f"Матричная экспонента реализована для d = 2, 3, получено {ndim}")
    b = np.asarray(b_cell, dtype=np.float64).reshape(n_skew(ndim), 1)
    return rotation_field(b, ndim)[0]


def _tensor_entries(matrices: np.ndarray, ndim: int) -> np.ndarray:
    return np.stack([matrices[..., i, j] for i, j in TENSOR_ENTRIES[ndim]])


def build_diffusion(params: TransportParams) -> Tuple[TensorField, TensorField, np.ndarray, np.ndarray]:
    """D̄ = U Λ Uᵀ и D = A·D̄; возвращает также U (*shape, d, d) и Λ (*shape, d)"""
    grid = params.grid
    u = rotation_field(params.spectral.b, grid.ndim)
    lam = np.moveaxis(params.spectral.lam, 0, -1)
    d_bar_full = np.einsum('...ik,...k,...jk->...ij', u, lam, u)
    d_bar_entries = _tensor_entries(d_bar_full, grid.ndim)
    d_entries = params.anomaly.values[None] * d_bar_entries
    return TensorField(grid, d_bar_entries), TensorField(grid, d_entries), u, lam


def derive(params: TransportParams) -> DerivedFields:
    v_bar, v = build_velocity(params)
    d_bar, d, u, lam = build_diffusion(params)
    return DerivedFields(v_bar=v_bar, v=v, d_bar=d_bar, d=d, u=u, lam=lam,
                         a=params.anomaly.a, sigma=params.sigma)


def feature_maps(v: VectorField, d: TensorField) -> Dict[str, ScalarField]:
    """Карты признаков: ||V||_2, след D и фракционная анизотропия"""
    check_same_grid(v, d)
    grid = d.grid
    eigenvalues = np.linalg.eigvalsh(d.full())
    n = grid.ndim
    mean = eigenvalues.mean(axis=-1, keepdims=True)
    spread = np.sqrt(np.sum((eigenvalues - mean) ** 2, axis=-1))
    magnitude = np.sqrt(np.sum(eigenvalues ** 2, axis=-1))
    safe = np.where(magnitude > 0, magnitude, 1.0)
    fa = np.where(magnitude > 0, np.sqrt(n / (n - 1)) * spread / safe, 0.0)
    return {
        'vmag': ScalarField(grid, v.norm()),
        'trace': ScalarField(grid, d.trace()),
        'fa': ScalarField(grid, fa),
    }


def velocity_vjp(params: TransportParams, v_bar_cot: Optional[np.ndarray],
                 v_cot: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Котангенсы (Psi, A) по котангенсам V̄ и V"""
    grid = params.grid
    psi = params.potential.array
    a = params.anomaly.values
    psi_cot = np.zeros_like(psi)
    a_cot = np.zeros(grid.shape)
    if v_cot is not None:
        product_cot = curl_transpose(v_cot, grid)
        if grid.ndim == 2:
            psi_cot += a * product_cot
            a_cot += psi * product_cot
        else:
            psi_cot += a[None] * product_cot
            a_cot += np.sum(psi * product_cot, axis=0)
    if v_bar_cot is not None:
        psi_cot += curl_transpose(v_bar_cot, grid)
    return psi_cot, a_cot


def diffusion_vjp(params: TransportParams, d_bar_cot: Optional[np.ndarray], d_cot: Optional[np.ndarray],
                  u_cot: Optional[np.ndarray] = None,
                  lam_cot: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Котангенсы (B, Λ, A) по котангенсам D̄, D (уникальные элементы), U и Λ.

    Returns:
        Tuple: b_cot (k, *shape), lam_cot (d, *shape), a_cot (*shape)
    """
    grid = params.grid
    n = grid.ndim
    pairs = TENSOR_ENTRIES[n]
    d_bar, _, u, lam = build_diffusion(params)
    a = params.anomaly.values

    total = np.zeros((len(pairs),) + grid.shape)
    a_cot = np.zeros(grid.shape)
    if d_bar_cot is not None:
        total += d_bar_cot
    if d_cot is not None:
        total += a[None] * d_cot
        a_cot += np.sum(d_cot * d_bar.entries, axis=0)

    # Котангенс полной симметричной матрицы: внедиагональные элементы делятся пополам
    m_cot = np.zeros(grid.shape + (n, n))
    for k, (i, j) in enumerate(pairs):
        if i == j:
            m_cot[..., i, i] = total[k]
        else:
            m_cot[..., i, j] = 0.5 * total[k]
            m_cot[..., j, i] = 0.5 * total[k]

    u_total = 2.0 * np.einsum('...ij,...jk,...k->...ik', m_cot, u, lam)
    if u_cot is not None:
        u_total = u_total + u_cot
    lam_total = np.einsum('...ji,...jk,...ki->...i', u, m_cot, u)
    if lam_cot is not None:
        lam_total = lam_total + lam_cot

    derivatives = rotation_derivatives(params.spectral.b, n)
    b_cot = np.sum(derivatives * u_total[None], axis=(-2, -1))
    return b_cot, np.moveaxis(lam_total, -1, 0), a_cot


def save_params(params: TransportParams, directory: str) -> None:
    """Сохранение параметров в каталог: psi, b, lambda, a, sigma в ADPF и meta.txt"""
    os.makedirs(directory, exist_ok=True)
    grid = params.grid
    for name, array in params.arrays().items():
        if name == 'b' and grid.ndim == 2:
            array = array[0]
        write_array(array, grid, os.path.join(directory, f'{name}.adpf'))
    write_meta(os.path.join(directory, 'meta.txt'), {
        'ndim': grid.ndim,
        'shape': ','.join(str(n) for n in grid.shape),
        'spacing': ','.join(repr(h) for h in grid.spacing),
        'boundary': grid.boundary.value,
    })
    logger.info(f"Параметры сохранены в {directory}")


def load_params(directory: str) -> TransportParams:
    meta = read_meta(os.path.join(directory, 'meta.txt'))
    grid = Grid(
        tuple(int(n) for n in meta['shape'].split(',')),
        tuple(float(h) for h in meta['spacing'].split(',')),
        meta.get('boundary', 'neumann'),
    )
    arrays = {}
    for name in ('psi', 'b', 'lambda', 'a', 'sigma'):
        array, file_grid = read_array(os.path.join(directory, f'{name}.adpf'))
        if not file_grid.same_domain(grid):
            raise ConfigError(f"Сетка файла {name}.adpf не совпадает с meta.txt")
        arrays[name] = array
    return TransportParams.from_arrays(grid, arrays['psi'], arrays['b'], arrays['lambda'],
                                       arrays['a'], arrays['sigma'])
