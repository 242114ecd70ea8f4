import math
import os
from typing import Any, Dict, Optional, Sequence, Tuple


def _is_positive(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0


def validate_solver_config(cfg) -> Tuple[bool, Optional[str]]:
    """
    Проверка настроек интегратора

    Args:
        cfg: SolverConfig

    Returns:
        Tuple[bool, Optional[str]]: (Успех, Сообщение об ошибке)
    """
    if not _is_positive(cfg.dt):
        return False, f"Интервал между кадрами dt должен быть положительным, получено {cfg.dt}"

    if cfg.substep is not None:
        if not _is_positive(cfg.substep):
            return False, f"Подшаг должен быть положительным или 'auto', получено {cfg.substep}"
        if cfg.substep > cfg.dt:
            return False, f"Подшаг {cfg.substep} больше интервала dt = {cfg.dt}"

    if not (isinstance(cfg.cfl_safety, (int, float)) and 0 < cfg.cfl_safety <= 1):
        return False, f"Коэффициент запаса CFL должен лежать в (0, 1], получено {cfg.cfl_safety}"

    if not (_is_positive(cfg.rtol) and _is_positive(cfg.atol)):
        return False, "Допуски rtol и atol должны быть положительными"

    if not isinstance(cfg.seed, int) or cfg.seed < 0 or cfg.seed >= 2 ** 64:
        return False, f"Зерно должно быть целым числом в [0, 2^64), получено {cfg.seed}"

    return True, None


def _valid_range(bounds: Sequence[float]) -> bool:
    return len(bounds) == 2 and all(math.isfinite(b) for b in bounds) and bounds[0] < bounds[1]


def validate_protocol(protocol) -> Tuple[bool, Optional[str]]:
    """
    Проверка протокола синтетических данных

    Returns:
        Tuple[bool, Optional[str]]: (Успех, Сообщение об ошибке)
    """
    if len(protocol.shape) not in (2, 3):
        return False, "Протокол поддерживает только 2D и 3D сетки"

    if protocol.n_frames < 2:
        return False, "Нужно минимум 2 кадра"

    if not _is_positive(protocol.dt):
        return False, "Интервал dt должен быть положительным"

    for name in ('lambda_range', 'psi_range', 'depth_range', 'anomaly_std_range'):
        if not _valid_range(getattr(protocol, name)):
            return False, f"Диапазон {name} вырожден: {getattr(protocol, name)}"

    if protocol.lambda_range[0] < 0:
        return False, "Собственные значения диффузии не могут быть отрицательными"

    if not 0 <= protocol.anomaly_prob <= 1:
        return False, f"Вероятность аномалии должна лежать в [0, 1], получено {protocol.anomaly_prob}"

    if not (0 < protocol.depth_range[0] and protocol.depth_range[1] <= 1):
        return False, "Глубина аномалии должна лежать в (0, 1]"

    if not _is_positive(protocol.init_std):
        return False, "Ширина начального гауссиана должна быть положительной"

    return True, None


def validate_fit_config(cfg) -> Tuple[bool, Optional[str]]:
    """
    Проверка настроек обратной задачи

    Returns:
        Tuple[bool, Optional[str]]: (Успех, Сообщение об ошибке)
    """
    for name in ('w_ul', 'w_ss', 'w_sigma'):
        value = getattr(cfg, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
            return False, f"Вес {name} должен быть неотрицательным, получено {value}"

    if cfg.n_in < 2:
        return False, "Окно должно содержать минимум 2 кадра (n_in >= 2)"

    if cfg.n_out < 1:
        return False, "Нужен хотя бы один контролируемый кадр (n_out >= 1)"

    if cfg.n_out > cfg.n_in:
        return False, f"n_out = {cfg.n_out} больше n_in = {cfg.n_in}"

    if cfg.max_iters < 0:
        return False, "Число итераций не может быть отрицательным"

    if cfg.warm_start_iters < 0:
        return False, "Число итераций разгона не может быть отрицательным"

    if not _is_positive(cfg.step_size):
        return False, "Шаг оптимизатора должен быть положительным"

    if cfg.window_stride is not None and cfg.window_stride < 1:
        return False, "Шаг окон должен быть не меньше 1"

    return True, None


def validate_paths(paths: Dict[str, Optional[str]]) -> Tuple[bool, Optional[str]]:
    """
    Проверка существования входных путей

    Args:
        paths: Словарь {имя флага: путь}; None пропускается

    Returns:
        Tuple[bool, Optional[str]]: (Успех, Сообщение об ошибке)
    """
    for name, path in paths.items():
        if path is None:
            continue
        if not os.path.exists(path):
            return False, f"Входной путь --{name} не найден: {path}"

    return True, None


def validate_frames(frames: Sequence[int], n_frames: int) -> Tuple[bool, Optional[str]]:
    if not frames:
        return False, "Список кадров пуст"

    for index in frames:
        if index < 0 or index >= n_frames:
            return False, f"Кадр {index} вне диапазона [0, {n_frames - 1}]"

    return True, None
