import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseProcess:
    """
    Счётчиковый источник приращений винеровского процесса (схема Эйлера-Маруямы).

    Для каждой пары (кадр, подшаг) создаётся генератор Philox с ключом seed и
    счётчиком (frame, substep, 0, 0); j-е число потока относится к ячейке j.
    Значение в ячейке зависит только от (seed, frame, substep, cell) и не зависит
    от порядка вызовов и числа потоков.
    """

    seed: int

    def standard_normal(self, frame: int, substep: int, size: int) -> np.ndarray:
        bit_generator = np.random.Philox(key=int(self.seed), counter=[int(frame), int(substep), 0, 0])
        return np.random.Generator(bit_generator).standard_normal(size)

    def increment(self, sigma: np.ndarray, frame: int, substep: int, step: float) -> np.ndarray:
        """Приращение sigma·sqrt(step)·eta для всех ячеек"""
        eta = self.standard_normal(frame, substep, sigma.size).reshape(sigma.shape)
        return sigma * np.sqrt(step) * eta
