from typing import Any, Dict, Optional

import numpy as np


def format_number(value: float) -> str:
    """Число с 17 значащими цифрами (без потерь для f64)"""
    return '%.17g' % value


def format_value(value: Any) -> str:
    """Значение конфигурации для manifest.txt"""
    if value is None:
        return 'none'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return format_number(float(value))
    if isinstance(value, (tuple, list)):
        return ','.join(format_value(v) for v in value)
    if hasattr(value, 'value'):
        return str(value.value)
    return str(value)


def format_manifest(tool_version: str, command: str, settings: Dict[str, Any], seed: Optional[int]) -> str:
    """
    Текст manifest.txt: версия, команда, зерно и полная итоговая конфигурация.
    Без временных меток, чтобы повторный запуск давал идентичный файл.
    """
    lines = [
        f"tool_version={tool_version}",
        f"command={command}",
        f"seed={format_value(seed)}",
    ]
    for key in sorted(settings):
        lines.append(f"{key}={format_value(settings[key])}")
    return '\n'.join(lines) + '\n'


def format_error_line(kind: str, error: Exception) -> str:
    """Одна машинно-читаемая строка для stderr"""
    reason = str(error).replace('\\', '\\\\').replace('"', '\\"').replace('\n', ' ')
    return f'adpf-error kind={kind} type={type(error).__name__} reason="{reason}"'


def parse_int_list(text: str) -> list:
    return [int(item) for item in text.split(',') if item.strip()]
