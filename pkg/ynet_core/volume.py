"""
Трехмерный объем: хранение, формат YVOL, нормализация интенсивности и MIP
"""

import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image

from .exceptions import (
    BadMagic,
    DegenerateRange,
    DimMismatch,
    InvalidKindCode,
    InvalidVolume,
    IoFailure,
    TruncatedPayload,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

YVOL_MAGIC = b"YVOL"
YVOL_VERSION = 1
# magic, version, nx, ny, nz, sx, sy, sz, kind, 3 байта выравнивания
_HEADER = struct.Struct("<4sI3I3fB3x")


class VolumeKind(str, Enum):
    """Тип содержимого объема"""

    INTENSITY = "intensity"
    PROBABILITY = "probability"
    LABEL = "label"


_KIND_CODES = {VolumeKind.INTENSITY: 0, VolumeKind.PROBABILITY: 1, VolumeKind.LABEL: 2}
_CODE_KINDS = {code: kind for kind, code in _KIND_CODES.items()}


class Axis(str, Enum):
    """Ось проекции"""

    X = "x"
    Y = "y"
    Z = "z"


# Массив хранится как [z, y, x], поэтому x меняется быстрее всего
_AXIS_INDEX = {Axis.Z: 0, Axis.Y: 1, Axis.X: 2}


@dataclass(frozen=True, eq=False)
class Volume3D:
    """
    Скалярная 3D-сетка с размером вокселя

    data имеет форму (nz, ny, nx), float32, и доступна только для чтения.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: VolumeKind = VolumeKind.INTENSITY

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float32, copy=True)
        if data.ndim != 3 or min(data.shape) < 1:
            raise InvalidVolume(f"Ожидался непустой 3D массив, получено {data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise InvalidVolume(f"Размер вокселя должен быть > 0: {self.spacing}")
        kind = VolumeKind(self.kind)
        if kind is VolumeKind.PROBABILITY and (data.min() < 0 or data.max() > 1):
            raise InvalidVolume("Вероятности должны лежать в [0, 1]")
        if kind is VolumeKind.LABEL and not np.all((data == 0) | (data == 1)):
            raise InvalidVolume("Метки должны быть 0 или 1")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def dims(self) -> Tuple[int, int, int]:
        """Размеры (nx, ny, nz)"""
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    @property
    def n_voxels(self) -> int:
        return int(self.data.size)

    def with_data(self, data: np.ndarray, kind: VolumeKind) -> "Volume3D":
        """Новый объем с тем же размером вокселя"""
        return Volume3D(data=data, spacing=self.spacing, kind=kind)

    def as_kind(self, kind: VolumeKind) -> "Volume3D":
        return Volume3D(data=self.data, spacing=self.spacing, kind=kind)


def write_volume(v: Volume3D, path: PathLike) -> None:
    """
    Запись объема в формате YVOL

    Args:
        v: Объем
        path: Путь к файлу
    """
    nx, ny, nz = v.dims
    header = _HEADER.pack(
        YVOL_MAGIC, YVOL_VERSION, nx, ny, nz, *v.spacing, _KIND_CODES[v.kind]
    )
    payload = np.ascontiguousarray(v.data, dtype="<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise IoFailure(f"Не удалось записать {path}: {e}") from e


def read_volume(path: PathLike) -> Volume3D:
    """
    Чтение объема из файла YVOL

    Args:
        path: Путь к файлу

    Returns:
        volume: Объем с размерами, шагом и типом из заголовка
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"Не удалось прочитать {path}: {e}") from e

    if raw[:4] != YVOL_MAGIC:
        raise BadMagic(f"{path}: сигнатура {raw[:4]!r} вместо {YVOL_MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedPayload(f"{path}: заголовок обрезан ({len(raw)} байт)")

    _, version, nx, ny, nz, sx, sy, sz, code = _HEADER.unpack_from(raw)
    if version != YVOL_VERSION:
        raise BadMagic(f"{path}: неподдерживаемая версия {version}")
    if code not in _CODE_KINDS:
        raise InvalidKindCode(f"{path}: код типа {code}")

    payload = raw[_HEADER.size :]
    if len(payload) % 4:
        raise TruncatedPayload(f"{path}: длина данных {len(payload)} не кратна 4")
    n_values = len(payload) // 4
    if n_values != nx * ny * nz:
        raise DimMismatch(
            f"{path}: заголовок {nx}x{ny}x{nz}={nx * ny * nz}, "
            f"в файле {n_values} значений"
        )

    data = np.frombuffer(payload, dtype="<f4").reshape(nz, ny, nx)
    return Volume3D(data=data, spacing=(sx, sy, sz), kind=_CODE_KINDS[code])


def normalize_intensity(
    v: Volume3D, p_lo: float = 1.0, p_hi: float = 99.0
) -> Volume3D:
    """
    Обрезка по перцентилям и линейное отображение в [0, 1]

    Args:
        v: Объем интенсивностей
        p_lo: Нижний перцентиль
        p_hi: Верхний перцентиль

    Returns:
        volume: Нормализованный объем (kind=Intensity)
    """
    if v.kind is not VolumeKind.INTENSITY:
        raise InvalidVolume("Нормализация применяется только к интенсивностям")
    if not 0 <= p_lo < p_hi <= 100:
        raise ValueError(f"Нужно 0 <= p_lo < p_hi <= 100, получено {p_lo}, {p_hi}")

    values = v.data.astype(np.float64)
    lo, hi = np.percentile(values, [p_lo, p_hi])
    if hi <= lo:
        raise DegenerateRange(f"Перцентили совпадают: {lo}")

    out = (np.clip(values, lo, hi) - lo) / (hi - lo)
    return v.with_data(np.clip(out, 0.0, 1.0), VolumeKind.INTENSITY)


def render_mip(v: Volume3D, axis: Axis) -> np.ndarray:
    """
    Проекция максимальной интенсивности

    Args:
        v: Объем интенсивностей или вероятностей
        axis: Ось проекции

    Returns:
        image: 8-битное изображение по двум оставшимся осям
    """
    if v.kind is VolumeKind.LABEL:
        raise InvalidVolume("Для меток используйте as_kind(PROBABILITY)")
    projection = v.data.max(axis=_AXIS_INDEX[Axis(axis)]).astype(np.float64)
    scaled = np.floor(np.clip(projection, 0.0, 1.0) * 255.0 + 0.5)
    return scaled.astype(np.uint8)


def write_pgm(image: np.ndarray, path: PathLike) -> None:
    """Сохранение 8-битного изображения в бинарный PGM (P5)"""
    try:
        Image.fromarray(np.ascontiguousarray(image, dtype=np.uint8)).save(
            path, format="PPM"
        )
    except OSError as e:
        raise IoFailure(f"Не удалось записать {path}: {e}") from e


def write_mips(v: Volume3D, stem: PathLike) -> list[Path]:
    """Три MIP (по осям x, y, z) рядом с объемом: <stem>.mip_<axis>.pgm"""
    view = v.as_kind(VolumeKind.PROBABILITY) if v.kind is VolumeKind.LABEL else v
    paths = []
    for axis in Axis:
        path = Path(f"{stem}.mip_{axis.value}.pgm")
        write_pgm(render_mip(view, axis), path)
        paths.append(path)
    logger.debug("MIP записаны: %s", [p.name for p in paths])
    return paths
