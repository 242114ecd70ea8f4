import logging
import os
import traceback
from typing import Optional, Tuple

import numpy as np
from PIL import Image

from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)


def to_grayscale(values: np.ndarray, value_range: Optional[Tuple[float, float]] = None) -> np.ndarray:
    """Линейное отображение двумерного среза в 0..255; постоянное поле даёт нули"""
    values = np.asarray(values, dtype=np.float64)
    low, high = value_range if value_range is not None else (float(np.min(values)), float(np.max(values)))
    if high <= low:
        return np.zeros(values.shape, dtype=np.uint8)
    scaled = np.clip((values - low) / (high - low), 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8)


def middle_slice(values: np.ndarray) -> np.ndarray:
    """Для 3D поля - центральный срез по последней оси"""
    if values.ndim == 2:
        return values
    if values.ndim == 3:
        return values[..., values.shape[-1] // 2]
    raise ConfigError(f"Экспорт среза поддерживает только 2D и 3D поля, получено ndim = {values.ndim}")


def save_pgm(plane: np.ndarray, path: str, value_range: Optional[Tuple[float, float]] = None) -> None:
    """
    Запись двумерного среза в PGM (оттенки серого, ось 0 - строки изображения).

    Args:
        plane: Срез поля (см. middle_slice)
        path: Путь к файлу .pgm
        value_range: Диапазон, отображаемый в 0..255 (по умолчанию min..max)
    """
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ConfigError(f"PGM записывает только двумерный срез, получено ndim = {plane.ndim}")
    try:
        pixels = to_grayscale(plane, value_range)
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        Image.fromarray(pixels, mode='L').save(path, format='PPM')
    except Exception as e:
        logger.error(f"Error writing PGM {path}: {e}")
        logger.error(traceback.format_exc())
        raise
