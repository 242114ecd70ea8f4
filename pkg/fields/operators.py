"""
Дискретные дифференциальные операторы на прямоугольной сетке.

Все операторы собираются как разреженные матрицы scipy.sparse над вектором
ячеек в порядке row-major. Градиент повторяет шаблон np.gradient(edge_order=2):
центральные разности внутри, односторонние второго порядка на краях.
Центральные разности по разным осям коммутируют, поэтому div(curl(P))
обращается в ноль во внутренних ячейках с точностью до округления.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple, Union

import numpy as np
from scipy import sparse

from fields.models import (
    BoundaryKind, Grid, ScalarField, TensorField, VectorField, check_same_grid,
)
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DifferenceOperators:
    """Набор разреженных операторов одной сетки"""

    grid: Grid
    gradient: Tuple[sparse.csr_matrix, ...]
    flux_divergence: Tuple[sparse.csr_matrix, ...]
    # Операторы "ячейки -> грани" по каждой оси
    face_left: Tuple[sparse.csr_matrix, ...]
    face_right: Tuple[sparse.csr_matrix, ...]
    face_mean: Tuple[sparse.csr_matrix, ...]
    face_difference: Tuple[sparse.csr_matrix, ...]


def _gradient_1d(n: int, h: float) -> sparse.csr_matrix:
    m = sparse.lil_matrix((n, n))
    for k in range(1, n - 1):
        m[k, k - 1] = -0.5 / h
        m[k, k + 1] = 0.5 / h
    m[0, 0], m[0, 1], m[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    m[n - 1, n - 3], m[n - 1, n - 2], m[n - 1, n - 1] = 0.5 / h, -2.0 / h, 1.5 / h
    return m.tocsr()


def _flux_divergence_1d(n: int, h: float, boundary: BoundaryKind) -> sparse.csr_matrix:
    if boundary is not BoundaryKind.NEUMANN_ZERO_FLUX:
        return _gradient_1d(n, h)

    # Фиктивная ячейка с отражённым (антисимметричным) потоком: поток через стенку равен нулю
    m = sparse.lil_matrix((n, n))
    for k in range(1, n - 1):
        m[k, k - 1] = -0.5 / h
        m[k, k + 1] = 0.5 / h
    m[0, 0], m[0, 1] = 0.5 / h, 0.5 / h
    m[n - 1, n - 2], m[n - 1, n - 1] = -0.5 / h, -0.5 / h
    return m.tocsr()


def _lift(op: sparse.spmatrix, axis: int, shape: Tuple[int, ...]) -> sparse.csr_matrix:
    """Поднимает одномерный оператор на ось axis многомерной сетки (row-major)"""
    before = int(np.prod(shape[:axis])) if axis > 0 else 1
    after = int(np.prod(shape[axis + 1:])) if axis + 1 < len(shape) else 1
    lifted = sparse.kron(sparse.identity(before), sparse.kron(op, sparse.identity(after)))
    return sparse.csr_matrix(lifted)


@lru_cache(maxsize=32)
def difference_operators(grid: Grid) -> DifferenceOperators:
    """Сборка (и кеширование) операторов для сетки"""
    gradient, divergence = [], []
    left, right, mean, difference = [], [], [], []
    for axis, (n, h) in enumerate(zip(grid.shape, grid.spacing)):
        gradient.append(_lift(_gradient_1d(n, h), axis, grid.shape))
        divergence.append(_lift(_flux_divergence_1d(n, h, grid.boundary), axis, grid.shape))

        left_1d = sparse.eye(n - 1, n, k=0, format='csr')
        right_1d = sparse.eye(n - 1, n, k=1, format='csr')
        left.append(_lift(left_1d, axis, grid.shape))
        right.append(_lift(right_1d, axis, grid.shape))
        mean.append(_lift(0.5 * (left_1d + right_1d), axis, grid.shape))
        difference.append(_lift((right_1d - left_1d) / h, axis, grid.shape))

    logger.debug(f"Built difference operators for grid {grid.shape}, boundary={grid.boundary.value}")
    return DifferenceOperators(
        grid=grid,
        gradient=tuple(gradient),
        flux_divergence=tuple(divergence),
        face_left=tuple(left),
        face_right=tuple(right),
        face_mean=tuple(mean),
        face_difference=tuple(difference),
    )


def interior_mask(grid: Grid) -> np.ndarray:
    """Маска ячеек, не лежащих на границе области"""
    mask = np.zeros(grid.shape, dtype=bool)
    mask[tuple(slice(1, n - 1) for n in grid.shape)] = True
    return mask


def cell_coordinates(grid: Grid) -> np.ndarray:
    """Координаты центров ячеек, массив (d, *shape); первая ячейка в начале координат"""
    axes = [np.arange(n) * h for n, h in zip(grid.shape, grid.spacing)]
    return np.stack(np.meshgrid(*axes, indexing='ij'))


def gradient(f: ScalarField) -> VectorField:
    ops = difference_operators(f.grid)
    flat = f.flat()
    return VectorField(f.grid, np.stack([g @ flat for g in ops.gradient]).reshape((f.grid.ndim,) + f.grid.shape))


def divergence(F: VectorField) -> ScalarField:
    ops = difference_operators(F.grid)
    total = np.zeros(F.grid.size)
    for axis, g in enumerate(ops.gradient):
        total += g @ F.components[axis].reshape(-1)
    return ScalarField(F.grid, total.reshape(F.grid.shape))


def curl_array(potential: np.ndarray, grid: Grid) -> np.ndarray:
    g = difference_operators(grid).gradient
    if grid.ndim == 2:
        p = potential.reshape(-1)
        out = np.stack([g[1] @ p, -(g[0] @ p)])
    else:
        p = [component.reshape(-1) for component in potential]
        out = np.stack([
            g[1] @ p[2] - g[2] @ p[1],
            g[2] @ p[0] - g[0] @ p[2],
            g[0] @ p[1] - g[1] @ p[0],
        ])
    return out.reshape((grid.ndim,) + grid.shape)


def curl_transpose(w: np.ndarray, grid: Grid) -> np.ndarray:
    """Транспонированный ротор: переводит котангенс поля скоростей в котангенс потенциала"""
    g = difference_operators(grid).gradient
    w = [component.reshape(-1) for component in w]
    if grid.ndim == 2:
        return (g[1].T @ w[0] - g[0].T @ w[1]).reshape(grid.shape)
    out = np.stack([
        g[2].T @ w[1] - g[1].T @ w[2],
        g[0].T @ w[2] - g[2].T @ w[0],
        g[1].T @ w[0] - g[0].T @ w[1],
    ])
    return out.reshape((3,) + grid.shape)


def curl(P: Union[ScalarField, VectorField]) -> VectorField:
    """
    Ротор потенциала.

    В 2D потенциал скалярный: (dP/dy, -dP/dx); в 3D потенциал - трёхкомпонентное поле.
    """
    grid = P.grid
    if grid.ndim == 2:
        if not isinstance(P, ScalarField):
            raise ConfigError("В 2D ротор принимает скалярный потенциал")
        return VectorField(grid, curl_array(P.values, grid))
    if grid.ndim == 3:
        if not isinstance(P, VectorField):
            raise ConfigError("В 3D ротор принимает трёхкомпонентный потенциал")
        return VectorField(grid, curl_array(P.components, grid))
    raise ConfigError(f"Ротор не определён для размерности {grid.ndim}")


def matvec(d: TensorField, v: VectorField) -> VectorField:
    """Поточечное произведение D·v"""
    check_same_grid(d, v)
    n = d.grid.ndim
    out = np.zeros_like(v.components)
    for i in range(n):
        for j in range(n):
            out[i] += d.entry(i, j) * v.components[j]
    return VectorField(d.grid, out)


def laplacian_tensor(C: ScalarField, D: TensorField) -> ScalarField:
    """Дискретный оператор div(D grad C) с замыканием потока по типу границы"""
    grid = check_same_grid(C, D)
    ops = difference_operators(grid.with_boundary(C.grid.boundary))
    flux = matvec(D, gradient(C))
    total = np.zeros(grid.size)
    for axis, m in enumerate(ops.flux_divergence):
        total += m @ flux.components[axis].reshape(-1)
    return ScalarField(C.grid, total.reshape(grid.shape))


def diffusion_matrix(D: TensorField, boundary: BoundaryKind = None) -> sparse.csr_matrix:
    """Разреженная матрица оператора C -> div(D grad C)"""
    grid = D.grid if boundary is None else D.grid.with_boundary(boundary)
    ops = difference_operators(grid)
    n = grid.ndim
    total = sparse.csr_matrix((grid.size, grid.size))
    for i in range(n):
        for j in range(n):
            coefficient = sparse.diags(D.entry(i, j).reshape(-1))
            total = total + ops.flux_divergence[i] @ coefficient @ ops.gradient[j]
    return sparse.csr_matrix(total)
