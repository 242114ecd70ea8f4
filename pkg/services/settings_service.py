import logging
import os
from typing import Any, Dict, Optional

from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)


def load_run_config(path: Optional[str]) -> Dict[str, str]:
    """
    Чтение файла конфигурации запуска: строки key=value, '#' - комментарий.
    Ключи приводятся к виду флагов (дефисы заменяются на подчёркивания).
    """
    if path is None:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"Файл конфигурации не найден: {path}")

    settings = {}
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{number}: ожидалась строка key=value")
            key, value = line.split('=', 1)
            key = key.strip().replace('-', '_')
            if not key:
                raise ConfigError(f"{path}:{number}: пустой ключ")
            settings[key] = value.strip()

    logger.info(f"Загружено {len(settings)} настроек из {path}")
    return settings


def merge_settings(file_settings: Dict[str, str], flags: Dict[str, Any], defaults: Dict[str, Any]) -> Dict[str, Any]:
    """
    Итоговая конфигурация: флаги командной строки важнее файла, файл важнее умолчаний.

    Args:
        file_settings: Значения из файла (строки)
        flags: Явно заданные флаги (None означает "не задан")
        defaults: Значения по умолчанию, задают также тип значения из файла
    """
    resolved = dict(defaults)
    for key, value in file_settings.items():
        if key not in defaults:
            raise ConfigError(f"Неизвестный ключ конфигурации: {key}")
        resolved[key] = _cast_like(defaults[key], value, key)
    for key, value in flags.items():
        if value is not None:
            resolved[key] = value
    return resolved


def _cast_like(default: Any, value: str, key: str):
    try:
        if isinstance(default, list):
            return [item.strip() for item in value.split(',') if item.strip()]
        if isinstance(default, bool):
            if value.lower() in ('1', 'true', 'yes', 'on'):
                return True
            if value.lower() in ('0', 'false', 'no', 'off'):
                return False
            raise ValueError("ожидалось true/false")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError as e:
        raise ConfigError(f"Некорректное значение {key}={value!r}: {e}") from e
    return value
