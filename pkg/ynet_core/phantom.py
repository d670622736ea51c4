"""
Синтетические сосудистые фантомы: объем интенсивности + точная разметка
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.ndimage import gaussian_filter

from .exceptions import ForegroundOutOfRange, TubeOutOfBounds
from .rng import make_rng, spawn_seeds
from .volume import Volume3D, VolumeKind

logger = logging.getLogger(__name__)

Point3 = Tuple[float, float, float]

MAX_TUBE_RADIUS = 8.0
DEFAULT_DIMS = (64, 64, 64)
DEFAULT_BACKGROUND = 0.1
DEFAULT_CONTRAST = 0.6
DEFAULT_NOISE_SIGMA = 0.05
DEFAULT_PSF_SIGMA = 0.6
FOREGROUND_RANGE = (0.002, 0.03)
_NOISE_STREAM = 7


class TubeSpec(BaseModel):
    """Трубка: ломаная центральная линия с линейно меняющимся радиусом"""

    model_config = ConfigDict(frozen=True)

    control_points: List[Point3] = Field(..., min_length=2)
    radius_start: float = Field(..., gt=0, le=MAX_TUBE_RADIUS)
    radius_end: float = Field(..., gt=0, le=MAX_TUBE_RADIUS)
    intensity: float = Field(DEFAULT_CONTRAST, gt=0, le=1)


class PhantomSpec(BaseModel):
    """Параметры фантома"""

    model_config = ConfigDict(frozen=True)

    dims: Tuple[int, int, int] = DEFAULT_DIMS
    tubes: List[TubeSpec] = Field(default_factory=list)
    background_level: float = Field(DEFAULT_BACKGROUND, ge=0, lt=1)
    noise_sigma: float = Field(DEFAULT_NOISE_SIGMA, ge=0)
    psf_sigma: float = Field(DEFAULT_PSF_SIGMA, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("dims")
    @classmethod
    def _positive_dims(cls, v: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if min(v) < 1:
            raise ValueError(f"Размеры должны быть положительными: {v}")
        return v


@dataclass(frozen=True)
class PhantomPair:
    """Пара (изображение, разметка) с именем и исходной спецификацией"""

    name: str
    split: str
    spec: PhantomSpec
    image: Volume3D
    label: Volume3D


def _check_bounds(tube: TubeSpec, dims: Tuple[int, int, int]) -> None:
    for point in tube.control_points:
        if any(c < 0 or c > d - 1 for c, d in zip(point, dims)):
            raise TubeOutOfBounds(f"Точка {point} вне объема {dims}")


def rasterize_tube(tube: TubeSpec, dims: Tuple[int, int, int]) -> np.ndarray:
    """
    Бинарная маска трубки

    Воксель входит в трубку, если его центр лежит на расстоянии не больше
    r(s) от какого-либо отрезка центральной линии, где s - длина дуги до
    ближайшей точки отрезка.

    Args:
        tube: Трубка
        dims: Размеры объема (nx, ny, nz)

    Returns:
        mask: bool массив формы (nz, ny, nx)
    """
    nx, ny, nz = dims
    mask = np.zeros((nz, ny, nx), dtype=bool)
    points = np.asarray(tube.control_points, dtype=np.float64)
    seg_lengths = np.linalg.norm(np.diff(points, axis=0), axis=1)
    total = float(seg_lengths.sum())
    arc_start = np.concatenate([[0.0], np.cumsum(seg_lengths)[:-1]])
    r_max = max(tube.radius_start, tube.radius_end)

    for a, b, length, s0 in zip(points[:-1], points[1:], seg_lengths, arc_start):
        # Ограничивающий параллелепипед отрезка
        lo = np.maximum(np.floor(np.minimum(a, b) - r_max), 0).astype(int)
        hi = np.minimum(np.ceil(np.maximum(a, b) + r_max), np.array(dims) - 1)
        hi = hi.astype(int)
        zz, yy, xx = np.meshgrid(
            np.arange(lo[2], hi[2] + 1),
            np.arange(lo[1], hi[1] + 1),
            np.arange(lo[0], hi[0] + 1),
            indexing="ij",
        )
        centers = np.stack([xx, yy, zz], axis=-1).astype(np.float64)

        if length > 0:
            u = np.clip(((centers - a) @ (b - a)) / (length * length), 0.0, 1.0)
        else:
            u = np.zeros(centers.shape[:-1])
        closest = a + u[..., None] * (b - a)
        dist = np.linalg.norm(centers - closest, axis=-1)

        frac = (s0 + u * length) / total if total > 0 else np.zeros_like(u)
        radius = tube.radius_start + (tube.radius_end - tube.radius_start) * frac

        inside = dist <= radius
        mask[lo[2] : hi[2] + 1, lo[1] : hi[1] + 1, lo[0] : hi[0] + 1] |= inside

    return mask


def generate_phantom(spec: PhantomSpec) -> Tuple[Volume3D, Volume3D]:
    """
    Генерация фантома по спецификации

    Args:
        spec: Спецификация фантома

    Returns:
        (intensity, label): Объем интенсивности и бинарная разметка
    """
    for tube in spec.tubes:
        _check_bounds(tube, spec.dims)

    nx, ny, nz = spec.dims
    label = np.zeros((nz, ny, nx), dtype=bool)
    contrast = np.zeros((nz, ny, nx), dtype=np.float64)
    for tube in spec.tubes:
        mask = rasterize_tube(tube, spec.dims)
        label |= mask
        contrast = np.where(mask, np.maximum(contrast, tube.intensity), contrast)

    intensity = spec.background_level + contrast
    if spec.psf_sigma > 0:
        intensity = gaussian_filter(intensity, spec.psf_sigma, mode="nearest")
    if spec.noise_sigma > 0:
        rng = make_rng(spec.seed, _NOISE_STREAM)
        intensity = intensity + rng.normal(0.0, spec.noise_sigma, size=intensity.shape)
    intensity = np.clip(intensity, 0.0, 1.0)

    return (
        Volume3D(data=intensity, kind=VolumeKind.INTENSITY),
        Volume3D(data=label.astype(np.float32), kind=VolumeKind.LABEL),
    )


def foreground_fraction(label: Volume3D) -> float:
    return float(label.data.mean())


def _random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _random_centerline(
    rng: np.random.Generator,
    dims: Tuple[int, int, int],
    start: Optional[np.ndarray] = None,
    n_points: int = 4,
) -> List[Point3]:
    """Плавная ломаная: каждый шаг слегка поворачивает направление"""
    upper = np.array(dims, dtype=np.float64) - 1
    point = rng.uniform(0.15 * upper, 0.85 * upper) if start is None else start
    direction = _random_direction(rng)
    step = 0.3 * float(min(dims))
    points = [np.clip(point, 0, upper)]
    for _ in range(n_points - 1):
        direction = direction + 0.5 * _random_direction(rng)
        direction /= np.linalg.norm(direction)
        points.append(np.clip(points[-1] + step * direction, 0, upper))
    return [tuple(float(c) for c in p) for p in points]  # type: ignore[misc]


def random_phantom_spec(
    seed: int,
    dims: Tuple[int, int, int] = DEFAULT_DIMS,
    max_tries: int = 50,
) -> PhantomSpec:
    """
    Случайный фантом: 3-6 плавных трубок, одна пара бифуркации

    Трубки перегенерируются, пока доля переднего плана не попадет
    в FOREGROUND_RANGE. Радиусы [1.5, 4] заданы для 64^3 и масштабируются
    по min(dims), поэтому доля не зависит от размера объема.

    Raises:
        ForegroundOutOfRange: Ни одна из max_tries попыток не попала в диапазон
    """
    if max_tries < 1:
        raise ValueError(f"max_tries должно быть >= 1, получено {max_tries}")
    rng = make_rng(seed)
    scale = min(dims) / min(DEFAULT_DIMS)
    lo, hi = FOREGROUND_RANGE
    fraction = float("nan")
    for attempt in range(max_tries):
        n_tubes = int(rng.integers(3, 7))
        tubes: List[TubeSpec] = []
        for i in range(n_tubes):
            if i == 1:
                # Ветвь стартует из средней опорной точки первой трубки
                start = np.array(tubes[0].control_points[1])
                points = _random_centerline(rng, dims, start=start)
            else:
                points = _random_centerline(rng, dims)
            r_start = float(rng.uniform(1.5, 4.0))
            r_end = float(rng.uniform(1.5, r_start))
            tubes.append(
                TubeSpec(
                    control_points=points,
                    radius_start=min(r_start * scale, MAX_TUBE_RADIUS),
                    radius_end=min(r_end * scale, MAX_TUBE_RADIUS),
                )
            )
        spec = PhantomSpec(dims=dims, tubes=tubes, seed=seed)
        noiseless = spec.model_copy(update={"noise_sigma": 0.0, "psf_sigma": 0.0})
        _, label = generate_phantom(noiseless)
        fraction = foreground_fraction(label)
        if lo <= fraction <= hi:
            logger.debug(
                "seed=%d: доля сосудов %.4f (попытка %d)", seed, fraction, attempt
            )
            return spec
    raise ForegroundOutOfRange(
        f"seed={seed}: доля сосудов {fraction:.4f} вне [{lo}, {hi}] "
        f"после {max_tries} попыток для {dims}"
    )


def default_dataset(
    seed: int,
    n_train: int,
    n_val: int,
    n_test: int,
    dims: Tuple[int, int, int] = DEFAULT_DIMS,
) -> List[PhantomPair]:
    """
    Набор фантомов, разделенный на train/val/test

    Args:
        seed: Верхнеуровневое зерно
        n_train: Количество обучающих пар
        n_val: Количество валидационных пар
        n_test: Количество тестовых пар
        dims: Размер объемов

    Returns:
        pairs: Пары в порядке train, val, test
    """
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("Каждая часть набора должна содержать хотя бы одну пару")

    splits = ["train"] * n_train + ["val"] * n_val + ["test"] * n_test
    seeds = spawn_seeds(seed, len(splits))
    pairs = []
    counters = {"train": 0, "val": 0, "test": 0}
    for split, volume_seed in zip(splits, seeds):
        spec = random_phantom_spec(volume_seed, dims)
        image, label = generate_phantom(spec)
        name = f"{split}_{counters[split]:03d}"
        counters[split] += 1
        pairs.append(
            PhantomPair(name=name, split=split, spec=spec, image=image, label=label)
        )
    return pairs
