import logging
from dataclasses import dataclass
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from scipy.stats import ttest_ind
from sklearn import metrics as sk_metrics

from fields.models import Grid, ScalarField, TensorField, TimeSeries, VectorField, check_same_grid
from utils.exceptions import ConfigError, DegenerateStatisticError, GridMismatchError

logger = logging.getLogger(__name__)

AnyField = Union[ScalarField, VectorField, TensorField, TimeSeries, np.ndarray]

# Сетка порогов по умолчанию для подбора tau
DEFAULT_THRESHOLDS = tuple(np.round(np.arange(0.05, 1.0, 0.05), 2))


def _pointwise_norms(item: AnyField) -> np.ndarray:
    if isinstance(item, ScalarField):
        return np.abs(item.values)
    if isinstance(item, VectorField):
        return item.norm()
    if isinstance(item, TensorField):
        return item.frobenius()
    if isinstance(item, TimeSeries):
        return np.abs(item.data)
    return np.abs(np.asarray(item, dtype=np.float64))


def _difference(truth: AnyField, pred: AnyField):
    if isinstance(truth, np.ndarray) or isinstance(pred, np.ndarray):
        a, b = np.asarray(truth, dtype=np.float64), np.asarray(pred, dtype=np.float64)
        if a.shape != b.shape:
            raise GridMismatchError(f"Формы массивов не совпадают: {a.shape} и {b.shape}")
        return a - b
    if type(truth) is not type(pred):
        raise ConfigError(f"Разные виды полей: {type(truth).__name__} и {type(pred).__name__}")
    check_same_grid(truth, pred)
    if isinstance(truth, ScalarField):
        return ScalarField(truth.grid, truth.values - pred.values)
    if isinstance(truth, VectorField):
        return VectorField(truth.grid, truth.components - pred.components)
    if isinstance(truth, TensorField):
        return TensorField(truth.grid, truth.entries - pred.entries)
    if truth.n_frames != pred.n_frames:
        raise ConfigError(f"Число кадров не совпадает: {truth.n_frames} и {pred.n_frames}")
    return truth.data - pred.data


def rae(truth: AnyField, pred: AnyField) -> float:
    """
    Средняя по области относительная ошибка |F - F̂| / |F|.

    Норма: модуль для скаляров и рядов, 2-норма для векторов, Фробениус для тензоров.
    Ячейки с |F| = 0 исключаются из среднего.
    """
    denominator = _pointwise_norms(truth)
    numerator = _pointwise_norms(_difference(truth, pred))
    keep = denominator > 0
    excluded = int(denominator.size - np.count_nonzero(keep))
    if not np.any(keep):
        raise DegenerateStatisticError("RAE не определена: все ячейки истинного поля имеют нулевую норму")
    if excluded:
        logger.info(f"RAE: excluded {excluded} zero-norm cell(s) of {denominator.size}")
    return float(np.mean(numerator[keep] / denominator[keep]))


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Очаг и контралатеральная область (зеркало очага по оси axis без ячеек самого очага)"""

    grid: Grid
    mask: np.ndarray
    contralateral: np.ndarray
    axis: int = 0

    @classmethod
    def from_lesion(cls, grid: Grid, lesion: np.ndarray, axis: int = 0) -> 'RegionMask':
        lesion = np.asarray(lesion).astype(bool)
        if lesion.shape != grid.shape:
            raise GridMismatchError(f"Маска формы {lesion.shape} не совпадает с сеткой {grid.shape}")
        if not 0 <= axis < grid.ndim:
            raise ConfigError(f"Ось отражения {axis} вне [0, {grid.ndim})")
        contralateral = np.flip(lesion, axis=axis) & ~lesion
        return cls(grid=grid, mask=lesion, contralateral=contralateral, axis=axis)

    @classmethod
    def from_field(cls, field: ScalarField, axis: int = 0) -> 'RegionMask':
        return cls.from_lesion(field.grid, field.values > 0.5, axis)


def _region_values(feature: ScalarField, regions: RegionMask) -> Tuple[np.ndarray, np.ndarray]:
    if feature.grid.shape != regions.grid.shape:
        raise GridMismatchError("Поле признака и маска заданы на разных сетках")
    lesion = feature.values[regions.mask]
    contra = feature.values[regions.contralateral]
    if lesion.size == 0 or contra.size == 0:
        raise DegenerateStatisticError("Пустая область: очаг или контралатеральная область не содержит ячеек")
    return lesion, contra


def relative_mean(feature: ScalarField, regions: RegionMask) -> float:
    """min(mean_lesion / mean_contra, mean_contra / mean_lesion)"""
    lesion, contra = _region_values(feature, regions)
    lesion_mean, contra_mean = float(np.mean(lesion)), float(np.mean(contra))
    if lesion_mean <= 0 or contra_mean <= 0:
        raise DegenerateStatisticError(
            f"Относительное среднее требует положительных средних: {lesion_mean:.6e}, {contra_mean:.6e}")
    return min(lesion_mean / contra_mean, contra_mean / lesion_mean)


def abs_tvalue(feature: ScalarField, regions: RegionMask) -> float:
    """|t| Уэлча между ячейками очага и контралатеральной области"""
    lesion, contra = _region_values(feature, regions)
    if lesion.size < 2 or contra.size < 2:
        raise DegenerateStatisticError("Для t-статистики нужно минимум 2 ячейки в каждой области")
    if np.var(lesion) == 0 and np.var(contra) == 0:
        raise DegenerateStatisticError("Нулевая дисперсия в обеих областях: t-статистика не определена")
    return float(abs(ttest_ind(lesion, contra, equal_var=False).statistic))


def _scores_and_labels(score: Union[ScalarField, np.ndarray], labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values = score.values if isinstance(score, ScalarField) else np.asarray(score, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if values.shape != labels.shape:
        raise GridMismatchError(f"Формы оценки {values.shape} и меток {labels.shape} не совпадают")
    values, labels = values.reshape(-1), labels.reshape(-1)
    if labels.all() or not labels.any():
        raise DegenerateStatisticError("ROC не определена: метки содержат только один класс")
    return values, labels


def roc_auc(score: Union[ScalarField, np.ndarray], labels: np.ndarray) -> float:
    """Площадь под ROC; равные оценки дают 1/2"""
    values, labels = _scores_and_labels(score, labels)
    return float(sk_metrics.roc_auc_score(labels, values))


def roc_curve(score: Union[ScalarField, np.ndarray], labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Точки ROC: положительным считается ячейка с оценкой >= порога.

    Returns:
        Tuple: fpr, tpr, thresholds (пороги по убыванию, первая точка (0, 0) с порогом +inf)
    """
    values, labels = _scores_and_labels(score, labels)
    return sk_metrics.roc_curve(labels, values, drop_intermediate=False)


def segment_threshold(a_hat: ScalarField, tau: float) -> np.ndarray:
    """Сегментация очага: ячейки с Â < tau"""
    if not 0 < tau < 1:
        raise ConfigError(f"Порог tau должен лежать в (0, 1), получено {tau}")
    return a_hat.values < tau


def dice(pred_mask: np.ndarray, truth_mask: np.ndarray) -> float:
    """2|P∩T| / (|P| + |T|); для двух пустых масок 1"""
    pred_mask = np.asarray(pred_mask).astype(bool)
    truth_mask = np.asarray(truth_mask).astype(bool)
    if pred_mask.shape != truth_mask.shape:
        raise GridMismatchError(f"Формы масок не совпадают: {pred_mask.shape} и {truth_mask.shape}")
    total = int(np.count_nonzero(pred_mask)) + int(np.count_nonzero(truth_mask))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pred_mask & truth_mask)) / total


def best_threshold(a_hats: Sequence[ScalarField], masks: Sequence[np.ndarray],
                   candidates: Sequence[float] = DEFAULT_THRESHOLDS) -> Tuple[float, float]:
    """
    Общий порог для нескольких случаев, максимизирующий средний Dice.

    Returns:
        Tuple[float, float]: (tau, средний Dice)
    """
    if len(a_hats) != len(masks) or not a_hats:
        raise ConfigError("Нужен непустой набор пар (Â, маска) одинаковой длины")
    best_tau, best_score = None, -1.0
    for tau in candidates:
        score = float(np.mean([dice(segment_threshold(a, tau), m) for a, m in zip(a_hats, masks)]))
        if score > best_score:
            best_tau, best_score = float(tau), score
    return best_tau, best_score


def summarize(values: Sequence[float]) -> Dict[str, float]:
    """Среднее, медиана и стандартное отклонение по случаям"""
    array = np.asarray([v for v in values if v is not None and np.isfinite(v)], dtype=np.float64)
    if array.size == 0:
        raise DegenerateStatisticError("Нет конечных значений для сводки")
    return {
        'mean': float(np.mean(array)),
        'median': float(np.median(array)),
        'std': float(np.std(array, ddof=1)) if array.size > 1 else 0.0,
        'n': int(array.size),
    }
