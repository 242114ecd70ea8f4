import argparse
import logging
import os
import sys
import traceback
from typing import Any, Callable, Dict, Optional

from config import TOOL_VERSION
from fields.models import BoundaryKind, ScalarField, TimeSeries
from fields.storage import read_adpf
from services.monitoring import monitoring
from services.report_export import ReportExportService
from services.settings_service import load_run_config, merge_settings
from utils.exceptions import ConfigError, NumericalError, ToolkitError
from utils.formatters import format_error_line, format_manifest
from utils.validators import validate_paths

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class BaseHandler:
    """Общая часть обработчиков команд: разрешение настроек, манифесты, вывод"""

    command: str = ''
    # Умолчания задают и набор допустимых ключей файла конфигурации
    defaults: Dict[str, Any] = {}

    def __init__(self, exporter: Optional[ReportExportService] = None):
        self.exporter = exporter or ReportExportService()

    def resolve(self, args: argparse.Namespace) -> Dict[str, Any]:
        """Итоговые настройки: флаги > файл --config > умолчания"""
        flags = {key: getattr(args, key, None) for key in self.defaults}
        file_settings = load_run_config(getattr(args, 'config', None))
        return merge_settings(file_settings, flags, self.defaults)

    @staticmethod
    def require(settings: Dict[str, Any], *keys: str) -> None:
        missing = [key for key in keys if settings.get(key) in (None, '')]
        if missing:
            raise ConfigError(f"Не заданы обязательные параметры: {', '.join('--' + k.replace('_', '-') for k in missing)}")

    @staticmethod
    def check_inputs(**paths: Optional[str]) -> None:
        ok, message = validate_paths(paths)
        if not ok:
            raise ConfigError(message)

    @staticmethod
    def prepare_output(directory: str) -> str:
        try:
            os.makedirs(directory, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"Не удалось создать каталог {directory}: {e}") from e
        if not os.access(directory, os.W_OK):
            raise ConfigError(f"Каталог {directory} недоступен для записи")
        return directory

    def write_manifest(self, directory: str, settings: Dict[str, Any], seed: Optional[int] = None) -> None:
        path = os.path.join(directory, 'manifest.txt')
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(format_manifest(TOOL_VERSION, self.command, settings, seed))
        logger.debug(f"Manifest written to {path}")

    @staticmethod
    def read_scalar(path: str, boundary: BoundaryKind = BoundaryKind.NEUMANN_ZERO_FLUX) -> ScalarField:
        field = read_adpf(path, boundary)
        if not isinstance(field, ScalarField):
            raise ConfigError(f"{path}: ожидалось скалярное поле, получено {type(field).__name__}")
        return field

    @staticmethod
    def read_series(path: str, boundary: BoundaryKind = BoundaryKind.NEUMANN_ZERO_FLUX) -> TimeSeries:
        series = read_adpf(path, boundary)
        if not isinstance(series, TimeSeries):
            raise ConfigError(f"{path}: ожидался временной ряд, получено {type(series).__name__}")
        return series


def run_command(handler: Callable[[argparse.Namespace], None], args: argparse.Namespace) -> int:
    """
    Выполнение команды с переводом исключений в коды выхода.

    Returns:
        int: 0 - успех, 2 - ошибка конфигурации, 3 - численный сбой
    """
    try:
        with monitoring.timer(f"command.{args.command}"):
            handler(args)
        return EXIT_OK
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(format_error_line(e.kind, e), file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        print(format_error_line(e.kind, e), file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as e:
        logger.error(traceback.format_exc())
        print(format_error_line('config', e), file=sys.stderr)
        return EXIT_CONFIG
    except ToolkitError as e:
        logger.error(traceback.format_exc())
        print(format_error_line('numerical', e), file=sys.stderr)
        return EXIT_NUMERICAL
    finally:
        monitoring.report_stats()
