class ToolkitError(Exception):
    """Базовое исключение инструмента"""

    kind = 'internal'


class ConfigError(ToolkitError):
    """Ошибка конфигурации или входных данных (код выхода 2)"""

    kind = 'config'


class GridMismatchError(ConfigError):
    """Поля заданы на разных сетках"""


class FormatError(ConfigError):
    """Повреждённый или усечённый файл ADPF"""


class NumericalError(ToolkitError):
    """Численный сбой (код выхода 3)"""

    kind = 'numerical'


class CFLViolationError(NumericalError):
    """Явно заданный шаг больше допустимого по условию CFL"""


class BlowUpError(NumericalError):
    """Решение стало неконечным или неограниченно выросло"""


class FitDivergedError(NumericalError):
    """Функция потерь или градиент стали неконечными"""

    def __init__(self, message: str, block: str = None):
        super().__init__(message)
        self.block = block


class FitStalledError(NumericalError):
    """Бюджет итераций исчерпан без улучшения"""


class DegenerateStatisticError(NumericalError):
    """Статистика не определена (пустая область, нулевая дисперсия и т.п.)"""
