"""
Формат файлов полей "ADPF v1".

Заголовок: магия b'ADPF', u8 версия = 1, u8 ndim, u8 вид поля
(0 - скаляр, 1 - вектор, 2 - симметричный тензор, 3 - временной ряд),
u32 размер по каждой оси, f64 шаг по каждой оси. Для временного ряда далее
u32 число кадров и f64 dt. Затем полезная нагрузка little-endian f64 в порядке
row-major (вектор - блоки компонент, тензор - блоки элементов верхнего треугольника,
ряд - кадры подряд).
"""
import logging
import os
import struct
from typing import Dict, Tuple, Union

import numpy as np

from fields.models import TENSOR_ENTRIES, BoundaryKind, Grid, ScalarField, TensorField, TimeSeries, VectorField
from utils.exceptions import ConfigError, FormatError

logger = logging.getLogger(__name__)

MAGIC = b'ADPF'
VERSION = 1

KIND_SCALAR = 0
KIND_VECTOR = 1
KIND_TENSOR = 2
KIND_SERIES = 3

# Ограничение на размер полезной нагрузки (в числах f64)
MAX_VALUES = 2 ** 34

Field = Union[ScalarField, VectorField, TensorField, TimeSeries]


def _components(kind: int, ndim: int) -> int:
    if kind in (KIND_SCALAR, KIND_SERIES):
        return 1
    if kind == KIND_VECTOR:
        return ndim
    return len(TENSOR_ENTRIES[ndim])


def _encode(kind: int, grid: Grid, payload: np.ndarray, n_frames: int = 0, dt: float = 0.0) -> bytes:
    header = struct.pack('<4sBBB', MAGIC, VERSION, grid.ndim, kind)
    header += struct.pack(f'<{grid.ndim}I', *grid.shape)
    header += struct.pack(f'<{grid.ndim}d', *grid.spacing)
    if kind == KIND_SERIES:
        header += struct.pack('<Id', n_frames, dt)
    return header + np.ascontiguousarray(payload, dtype='<f8').tobytes()


def _kind_of(array: np.ndarray, grid: Grid) -> int:
    if array.shape == grid.shape:
        return KIND_SCALAR
    if array.shape == (grid.ndim,) + grid.shape:
        return KIND_VECTOR
    if array.shape == (len(TENSOR_ENTRIES[grid.ndim]),) + grid.shape:
        return KIND_TENSOR
    raise ConfigError(f"Массив формы {array.shape} не соответствует ни одному виду поля на сетке {grid.shape}")


def write_array(array: np.ndarray, grid: Grid, path: str) -> None:
    """Запись массива поля; вид поля определяется по форме массива"""
    array = np.asarray(array, dtype=np.float64)
    with open(path, 'wb') as f:
        f.write(_encode(_kind_of(array, grid), grid, array))


def write_adpf(obj: Field, path: str) -> None:
    if isinstance(obj, TimeSeries):
        data = _encode(KIND_SERIES, obj.grid, obj.data, obj.n_frames, obj.dt)
    elif isinstance(obj, ScalarField):
        data = _encode(KIND_SCALAR, obj.grid, obj.values)
    elif isinstance(obj, VectorField):
        data = _encode(KIND_VECTOR, obj.grid, obj.components)
    elif isinstance(obj, TensorField):
        data = _encode(KIND_TENSOR, obj.grid, obj.entries)
    else:
        raise ConfigError(f"Неподдерживаемый тип для записи ADPF: {type(obj).__name__}")

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(data)
    logger.debug(f"Записан файл {path} ({len(data)} байт)")


def _decode(raw: bytes, boundary: BoundaryKind):
    def take(fmt: str, offset: int):
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise FormatError("Повреждённый заголовок ADPF: файл обрывается внутри заголовка")
        return struct.unpack_from(fmt, raw, offset), offset + size

    (magic, version, ndim, kind), offset = take('<4sBBB', 0)
    if magic != MAGIC:
        raise FormatError(f"Повреждённый заголовок ADPF: неверная сигнатура {magic!r}")
    if version != VERSION:
        raise FormatError(f"Повреждённый заголовок ADPF: неподдерживаемая версия {version}")
    if ndim not in (1, 2, 3):
        raise FormatError(f"Повреждённый заголовок ADPF: ndim = {ndim}")
    if kind not in (KIND_SCALAR, KIND_VECTOR, KIND_TENSOR, KIND_SERIES):
        raise FormatError(f"Повреждённый заголовок ADPF: вид поля {kind}")

    shape, offset = take(f'<{ndim}I', offset)
    spacing, offset = take(f'<{ndim}d', offset)
    n_frames, dt = 1, 0.0
    if kind == KIND_SERIES:
        (n_frames, dt), offset = take('<Id', offset)

    count = _components(kind, ndim) * n_frames
    for n in shape:
        count *= n
    if count > MAX_VALUES:
        raise FormatError(f"Переполнение размера ADPF: {count} значений")
    expected = offset + 8 * count
    if len(raw) < expected:
        raise FormatError(f"Усечённые данные ADPF: ожидалось {expected} байт, получено {len(raw)}")
    if len(raw) > expected:
        raise FormatError(f"Лишние данные в конце ADPF: {len(raw) - expected} байт")

    try:
        grid = Grid(tuple(shape), tuple(spacing), boundary)
    except ConfigError as e:
        raise FormatError(f"Повреждённый заголовок ADPF: {e}") from e

    payload = np.frombuffer(raw, dtype='<f8', count=count, offset=offset).astype(np.float64)
    if kind == KIND_SERIES:
        return kind, grid, payload.reshape((n_frames,) + grid.shape), dt
    if kind == KIND_SCALAR:
        return kind, grid, payload.reshape(grid.shape), dt
    return kind, grid, payload.reshape((_components(kind, ndim),) + grid.shape), dt


def read_array(path: str, boundary: BoundaryKind = BoundaryKind.NEUMANN_ZERO_FLUX) -> Tuple[np.ndarray, Grid]:
    """Чтение массива поля без обёртки (используется для параметров с произвольным числом компонент)"""
    with open(path, 'rb') as f:
        kind, grid, payload, _ = _decode(f.read(), boundary)
    if kind == KIND_SERIES:
        raise FormatError(f"{path}: ожидалось поле, а не временной ряд")
    return payload, grid


def read_adpf(path: str, boundary: BoundaryKind = BoundaryKind.NEUMANN_ZERO_FLUX) -> Field:
    with open(path, 'rb') as f:
        kind, grid, payload, dt = _decode(f.read(), boundary)
    if kind == KIND_SERIES:
        return TimeSeries(grid, dt, payload)
    if kind == KIND_SCALAR:
        return ScalarField(grid, payload)
    if kind == KIND_VECTOR:
        return VectorField(grid, payload)
    return TensorField(grid, payload)


def write_meta(path: str, values: Dict[str, object]) -> None:
    """Текстовый файл key=value"""
    with open(path, 'w', encoding='utf-8') as f:
        for key, value in values.items():
            f.write(f"{key}={value}\n")


def read_meta(path: str) -> Dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"Файл метаданных не найден: {path}")
    values = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise FormatError(f"{path}: строка без '=': {line}")
            key, value = line.split('=', 1)
            values[key.strip()] = value.strip()
    return values
