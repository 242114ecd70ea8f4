import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from utils.exceptions import ConfigError, GridMismatchError

# Порядок хранения уникальных элементов симметричного тензора (верхний треугольник)
TENSOR_ENTRIES = {
    1: ((0, 0),),
    2: ((0, 0), (0, 1), (1, 1)),
    3: ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)),
}


class BoundaryKind(Enum):
    NEUMANN_ZERO_FLUX = 'neumann'
    CAUCHY_PATCH = 'cauchy'


@dataclass(frozen=True)
class Grid:
    """Прямоугольная сетка: число ячеек и шаг (мм) по каждой оси"""

    shape: Tuple[int, ...]
    spacing: Tuple[float, ...]
    boundary: BoundaryKind = BoundaryKind.NEUMANN_ZERO_FLUX

    def __post_init__(self):
        object.__setattr__(self, 'shape', tuple(int(n) for n in self.shape))
        object.__setattr__(self, 'spacing', tuple(float(h) for h in self.spacing))
        if isinstance(self.boundary, str):
            object.__setattr__(self, 'boundary', BoundaryKind(self.boundary))

        if len(self.shape) not in (1, 2, 3):
            raise ConfigError(f"Размерность сетки должна быть 1, 2 или 3, получено {len(self.shape)}")
        if len(self.spacing) != len(self.shape):
            raise ConfigError("Число шагов сетки не совпадает с числом осей")
        if any(n < 3 for n in self.shape):
            raise ConfigError(f"Каждая ось должна содержать минимум 3 ячейки: {self.shape}")
        if any(not (h > 0 and math.isfinite(h)) for h in self.spacing):
            raise ConfigError(f"Шаг сетки должен быть положительным: {self.spacing}")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def extent(self) -> Tuple[float, ...]:
        """Координата последней ячейки по каждой оси (первая ячейка в нуле)"""
        return tuple((n - 1) * h for n, h in zip(self.shape, self.spacing))

    def with_boundary(self, boundary: BoundaryKind) -> 'Grid':
        return Grid(self.shape, self.spacing, boundary)

    def same_domain(self, other: 'Grid') -> bool:
        return self.shape == other.shape and self.spacing == other.spacing


def check_same_grid(*items) -> Grid:
    """Проверка, что все поля заданы на одной сетке (граничное условие не сравнивается)"""
    grids = [item.grid for item in items]
    for grid in grids[1:]:
        if not grid.same_domain(grids[0]):
            raise GridMismatchError(f"Сетки не совпадают: {grids[0].shape} и {grid.shape}")
    return grids[0]


def _frozen_array(values, expected_shape: Tuple[int, ...], what: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    if array.shape != expected_shape:
        if array.size == int(np.prod(expected_shape)):
            array = array.reshape(expected_shape)
        else:
            raise ConfigError(f"{what}: ожидалась форма {expected_shape}, получено {array.shape}")
    if not np.all(np.isfinite(array)):
        raise ConfigError(f"{what}: значения должны быть конечными")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'values', _frozen_array(self.values, self.grid.shape, 'ScalarField'))

    @classmethod
    def zeros(cls, grid: Grid) -> 'ScalarField':
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: Grid, value: float) -> 'ScalarField':
        return cls(grid, np.full(grid.shape, float(value)))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Векторное поле: d компонент на общей сетке, массив формы (d, *shape)"""

    grid: Grid
    components: np.ndarray

    def __post_init__(self):
        expected = (self.grid.ndim,) + self.grid.shape
        object.__setattr__(self, 'components', _frozen_array(self.components, expected, 'VectorField'))

    @classmethod
    def zeros(cls, grid: Grid) -> 'VectorField':
        return cls(grid, np.zeros((grid.ndim,) + grid.shape))

    @classmethod
    def from_scalars(cls, fields: Sequence[ScalarField]) -> 'VectorField':
        grid = check_same_grid(*fields)
        return cls(grid, np.stack([f.values for f in fields]))

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, self.components[axis])

    def __iter__(self) -> Iterator[ScalarField]:
        for axis in range(self.grid.ndim):
            yield self.component(axis)

    def norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.components ** 2, axis=0))


@dataclass(frozen=True, eq=False)
class TensorField:
    """Симметричное тензорное поле, хранятся только элементы верхнего треугольника"""

    grid: Grid
    entries: np.ndarray

    def __post_init__(self):
        expected = (len(TENSOR_ENTRIES[self.grid.ndim]),) + self.grid.shape
        object.__setattr__(self, 'entries', _frozen_array(self.entries, expected, 'TensorField'))

    @classmethod
    def zeros(cls, grid: Grid) -> 'TensorField':
        return cls(grid, np.zeros((len(TENSOR_ENTRIES[grid.ndim]),) + grid.shape))

    @classmethod
    def identity(cls, grid: Grid, scale: float = 1.0) -> 'TensorField':
        pairs = TENSOR_ENTRIES[grid.ndim]
        entries = np.zeros((len(pairs),) + grid.shape)
        for k, (i, j) in enumerate(pairs):
            if i == j:
                entries[k] = scale
        return cls(grid, entries)

    @classmethod
    def from_full(cls, grid: Grid, matrices: np.ndarray) -> 'TensorField':
        """Построение из массива (*shape, d, d); берётся верхний треугольник"""
        pairs = TENSOR_ENTRIES[grid.ndim]
        return cls(grid, np.stack([matrices[..., i, j] for i, j in pairs]))

    @property
    def pairs(self) -> Tuple[Tuple[int, int], ...]:
        return TENSOR_ENTRIES[self.grid.ndim]

    def entry(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        return self.entries[self.pairs.index((i, j))]

    def full(self) -> np.ndarray:
        d = self.grid.ndim
        matrices = np.empty(self.grid.shape + (d, d))
        for k, (i, j) in enumerate(self.pairs):
            matrices[..., i, j] = self.entries[k]
            matrices[..., j, i] = self.entries[k]
        return matrices

    def trace(self) -> np.ndarray:
        return sum(self.entries[k] for k, (i, j) in enumerate(self.pairs) if i == j)

    def frobenius(self) -> np.ndarray:
        """Норма Фробениуса полной матрицы в каждой ячейке"""
        total = np.zeros(self.grid.shape)
        for k, (i, j) in enumerate(self.pairs):
            weight = 1.0 if i == j else 2.0
            total += weight * self.entries[k] ** 2
        return np.sqrt(total)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Упорядоченные кадры концентрации с постоянным интервалом dt"""

    grid: Grid
    dt: float
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != self.grid.ndim + 1 or data.shape[1:] != self.grid.shape:
            raise ConfigError(f"TimeSeries: кадры формы {data.shape[1:]} не совпадают с сеткой {self.grid.shape}")
        if data.shape[0] < 2:
            raise ConfigError("TimeSeries должен содержать минимум 2 кадра")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError(f"Интервал dt должен быть положительным: {self.dt}")
        if not np.all(np.isfinite(data)):
            raise ConfigError("TimeSeries: значения должны быть конечными")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'dt', float(self.dt))

    @classmethod
    def from_frames(cls, frames: Sequence[ScalarField], dt: float) -> 'TimeSeries':
        grid = check_same_grid(*frames)
        return cls(grid, dt, np.stack([f.values for f in frames]))

    @property
    def n_frames(self) -> int:
        return int(self.data.shape[0])

    @property
    def frames(self) -> List[ScalarField]:
        return [self.frame(i) for i in range(self.n_frames)]

    def frame(self, index: int) -> ScalarField:
        return ScalarField(self.grid, self.data[index])

    def window(self, start: int, length: int) -> 'TimeSeries':
        """Окно из length последовательных кадров начиная с start"""
        if start < 0 or length < 2 or start + length > self.n_frames:
            raise ConfigError(f"Окно [{start}, {start + length}) вне ряда из {self.n_frames} кадров")
        return TimeSeries(self.grid, self.dt, self.data[start:start + length])
