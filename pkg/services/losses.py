"""
Функции потерь обратной задачи и их котангенсы.

Каждая функция *_with_grad возвращает значение и словарь котангенсов по
предсказанным величинам; в точках недифференцируемости (норма в нуле,
равенство ветвей min) берётся нулевой градиент или первая ветвь.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np

from fields.models import TENSOR_ENTRIES, ScalarField, TensorField, TimeSeries, VectorField, check_same_grid
from fields.operators import difference_operators
from services.representation import AnomalyField, DerivedFields
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

ORTHONORMAL_TOLERANCE = 1e-8


class FitMode(Enum):
    PHYSICS_INFORMED = 'physics'
    TRANSPORT_INFORMED = 'transport'


def _norm_with_grad(diff: np.ndarray, axis) -> Tuple[np.ndarray, np.ndarray]:
    """Поточечная норма и её производная по diff (ноль там, где норма равна нулю)"""
    norm = np.sqrt(np.sum(diff ** 2, axis=axis))
    safe = np.where(norm > 0, norm, 1.0)
    grad = np.where(np.expand_dims(norm > 0, axis), diff / np.expand_dims(safe, axis), 0.0)
    return norm, grad


def _entry_weights(ndim: int) -> np.ndarray:
    """Вес уникального элемента в норме Фробениуса полной матрицы"""
    return np.array([1.0 if i == j else 2.0 for i, j in TENSOR_ENTRIES[ndim]])


def _frobenius_with_grad(diff: np.ndarray, ndim: int) -> Tuple[np.ndarray, np.ndarray]:
    weights = _entry_weights(ndim).reshape((-1,) + (1,) * ndim)
    norm = np.sqrt(np.sum(weights * diff ** 2, axis=0))
    safe = np.where(norm > 0, norm, 1.0)
    grad = np.where(norm > 0, weights * diff / safe, 0.0)
    return norm, grad


def loss_vd_with_grad(truth: DerivedFields, pred: DerivedFields) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Среднее по области |V̄-V̂̄| + |V-V̂| + |D̄-D̂̄|_F + |D-D̂|_F + |A-Â|.

    Returns:
        Tuple: значение и котангенсы по pred (ключи v_bar, v, d_bar, d, a)
    """
    grid = check_same_grid(truth.v, pred.v)
    n = grid.size
    ndim = grid.ndim

    vb_norm, vb_grad = _norm_with_grad(pred.v_bar.components - truth.v_bar.components, axis=0)
    v_norm, v_grad = _norm_with_grad(pred.v.components - truth.v.components, axis=0)
    db_norm, db_grad = _frobenius_with_grad(pred.d_bar.entries - truth.d_bar.entries, ndim)
    d_norm, d_grad = _frobenius_with_grad(pred.d.entries - truth.d.entries, ndim)
    a_diff = pred.a.values - truth.a.values

    value = float(np.sum(vb_norm + v_norm + db_norm + d_norm + np.abs(a_diff)) / n)
    cotangents = {
        'v_bar': vb_grad / n,
        'v': v_grad / n,
        'd_bar': db_grad / n,
        'd': d_grad / n,
        'a': np.sign(a_diff) / n,
    }
    return value, cotangents


def loss_vd(truth: DerivedFields, pred: DerivedFields) -> float:
    return loss_vd_with_grad(truth, pred)[0]


def _check_orthonormal(u: np.ndarray, what: str) -> None:
    ndim = u.shape[-1]
    gram = np.einsum('...ki,...kj->...ij', u, u)
    error = float(np.max(np.abs(gram - np.eye(ndim)))) if gram.size else 0.0
    if error > ORTHONORMAL_TOLERANCE:
        raise ConfigError(f"Столбцы {what} не ортонормированы (отклонение {error:.2e})")


def loss_ul_with_grad(truth_u: np.ndarray, truth_lam: np.ndarray, pred_u: np.ndarray,
                      pred_lam: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Среднее по области sum_i min(|u_i + û_i|, |u_i - û_i|) + |Λ - Λ̂|.

    u - массивы (*shape, d, d) со столбцами-собственными векторами, lam - (*shape, d).
    """
    if truth_u.shape != pred_u.shape or truth_lam.shape != pred_lam.shape:
        raise ConfigError("Формы собственных векторов или собственных значений не совпадают")
    _check_orthonormal(truth_u, 'U')
    _check_orthonormal(pred_u, 'Û')
    n = int(np.prod(truth_lam.shape[:-1]))

    plus_norm, plus_grad = _norm_with_grad(truth_u + pred_u, axis=-2)
    minus_norm, minus_grad = _norm_with_grad(truth_u - pred_u, axis=-2)
    take_plus = plus_norm <= minus_norm
    vector_term = np.where(take_plus, plus_norm, minus_norm)
    u_grad = np.where(take_plus[..., None, :], plus_grad, -minus_grad)

    lam_norm, lam_grad = _norm_with_grad(pred_lam - truth_lam, axis=-1)
    value = float((np.sum(vector_term) + np.sum(lam_norm)) / n)
    return value, {'u': u_grad / n, 'lam': lam_grad / n}


def loss_ul(truth_u: np.ndarray, truth_lam: np.ndarray, pred_u: np.ndarray, pred_lam: np.ndarray) -> float:
    return loss_ul_with_grad(truth_u, truth_lam, pred_u, pred_lam)[0]


def loss_sigma_with_grad(a_truth: AnomalyField, sigma_hat: ScalarField) -> Tuple[float, Dict[str, np.ndarray]]:
    """Среднее ((1 - A) - σ̂)^2"""
    check_same_grid(a_truth.a, sigma_hat)
    residual = (1.0 - a_truth.values) - sigma_hat.values
    n = residual.size
    return float(np.sum(residual ** 2) / n), {'sigma': -2.0 * residual / n}


def loss_sigma(a_truth: AnomalyField, sigma_hat: ScalarField) -> float:
    return loss_sigma_with_grad(a_truth, sigma_hat)[0]


def loss_cc_with_grad(observed: TimeSeries, predicted: TimeSeries,
                      first: int = 0) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Среднеквадратичная ошибка по всем ячейкам кадров окна начиная с first.

    Кадры до first (начальное состояние, скопированное из наблюдения) в среднее
    не входят, их котангенс равен нулю.
    """
    check_same_grid(observed, predicted)
    if observed.n_frames != predicted.n_frames:
        raise ConfigError(f"Число кадров не совпадает: {observed.n_frames} и {predicted.n_frames}")
    if not 0 <= first < observed.n_frames:
        raise ConfigError(f"Первый контролируемый кадр {first} вне окна из {observed.n_frames} кадров")
    residual = predicted.data[first:] - observed.data[first:]
    n = residual.size
    cotangent = np.zeros_like(predicted.data)
    cotangent[first:] = 2.0 * residual / n
    return float(np.sum(residual ** 2) / n), {'frames': cotangent}


def loss_cc(observed: TimeSeries, predicted: TimeSeries, first: int = 0) -> float:
    return loss_cc_with_grad(observed, predicted, first)[0]


def loss_ss_with_grad(v_hat: VectorField, d_hat: TensorField) -> Tuple[float, Dict[str, np.ndarray]]:
    """Среднее по области квадрата нормы градиента каждой компоненты V̂ и каждого элемента D̂"""
    grid = check_same_grid(v_hat, d_hat)
    ops = difference_operators(grid)
    n = grid.size

    def smoothness(components: np.ndarray):
        flat = components.reshape(len(components), -1)
        value = 0.0
        grad = np.zeros_like(flat)
        for g in ops.gradient:
            derivative = (g @ flat.T).T
            value += float(np.sum(derivative ** 2))
            grad += 2.0 * (g.T @ derivative.T).T
        return value, grad.reshape(components.shape)

    v_value, v_grad = smoothness(v_hat.components)
    d_value, d_grad = smoothness(d_hat.entries)
    return (v_value + d_value) / n, {'v': v_grad / n, 'd': d_grad / n}


def loss_ss(v_hat: VectorField, d_hat: TensorField) -> float:
    return loss_ss_with_grad(v_hat, d_hat)[0]


@dataclass(frozen=True)
class LossPieces:
    vd: Optional[float] = None
    ul: Optional[float] = None
    cc: Optional[float] = None
    ss: Optional[float] = None
    sigma: Optional[float] = None

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {'vd': self.vd, 'ul': self.ul, 'cc': self.cc, 'ss': self.ss, 'sigma': self.sigma}


def total_loss(mode: FitMode, pieces: LossPieces, cfg) -> float:
    """
    Physics-informed: L_VD + w_ul L_UΛ.
    Transport-informed: L_CC + w_ss L_SS + w_sigma L_σ; без L_σ слагаемое отбрасывается.
    """
    if mode is FitMode.PHYSICS_INFORMED:
        if pieces.vd is None or pieces.ul is None:
            raise ConfigError("Для physics-informed режима нужны L_VD и L_UΛ")
        return pieces.vd + cfg.w_ul * pieces.ul

    if pieces.cc is None or pieces.ss is None:
        raise ConfigError("Для transport-informed режима нужны L_CC и L_SS")
    total = pieces.cc + cfg.w_ss * pieces.ss
    if pieces.sigma is not None:
        total += cfg.w_sigma * pieces.sigma
    return total
