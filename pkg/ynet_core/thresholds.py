"""
Классические пороговые методы: глобальный порог по энтропии Реньи
и локальный порог Phansalkar
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.ndimage import uniform_filter

from .exceptions import DegenerateHistogram
from .volume import Volume3D, VolumeKind

N_BINS = 256
TIE_RTOL = 1e-12
# Близкие пороги при комбинировании трех порядков
_CLOSE_BINS = 5


@dataclass(frozen=True, eq=False)
class Histogram256:
    """256 бинов на [0, 1]; бин b покрывает [b/256, (b+1)/256)"""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @classmethod
    def from_values(cls, values: np.ndarray) -> "Histogram256":
        bins = value_bins(values)
        return cls(counts=np.bincount(bins.ravel(), minlength=N_BINS).astype(np.int64))

    @classmethod
    def from_volume(cls, vol: Volume3D) -> "Histogram256":
        return cls.from_values(vol.data)


def value_bins(values: np.ndarray) -> np.ndarray:
    """Номер бина min(floor(v * 256), 255) для значений, обрезанных в [0, 1]"""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.minimum(np.floor(v * N_BINS), N_BINS - 1).astype(np.int64)


def _check_histogram(h: Histogram256) -> np.ndarray:
    if np.count_nonzero(h.counts) < 2:
        raise DegenerateHistogram("Нужно хотя бы два непустых бина")
    return h.probabilities


def renyi_criterion(h: Histogram256, alpha: float) -> np.ndarray:
    """
    H_A(alpha) + H_B(alpha) для каждого разреза t = 0..254

    Класс A - бины <= t, класс B - бины > t. Разрезы с пустым классом
    получают -inf. alpha = 1 - энтропия Шеннона (критерий Капура).

    Returns:
        criterion: массив длины 255
    """
    if alpha <= 0:
        raise ValueError(f"Порядок alpha должен быть > 0, получено {alpha}")
    p = _check_histogram(h)
    p1 = np.cumsum(p)[:-1]
    p2 = 1.0 - p1
    valid = (np.cumsum(p)[:-1] > 0) & (np.cumsum(p[::-1])[::-1][1:] > 0)

    with np.errstate(divide="ignore", invalid="ignore"):
        if alpha == 1.0:
            plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
            s_a = np.cumsum(plogp)[:-1]
            s_b = plogp.sum() - s_a
            h_a = np.log(p1) - s_a / p1
            h_b = np.log(p2) - s_b / p2
        else:
            pa = np.where(p > 0, p**alpha, 0.0)
            s_a = np.cumsum(pa)[:-1]
            s_b = pa.sum() - s_a
            term = 1.0 / (1.0 - alpha)
            h_a = term * np.log(s_a / p1**alpha)
            h_b = term * np.log(s_b / p2**alpha)
    return np.where(valid, h_a + h_b, -np.inf)


def best_cut(criterion: np.ndarray) -> int:
    """Нижняя медиана разрезов, критерий которых равен максимуму с точностью 1e-12"""
    best = float(np.max(criterion))
    tol = TIE_RTOL * max(1.0, abs(best))
    ties = np.flatnonzero(criterion >= best - tol)
    return int(ties[(len(ties) - 1) // 2])


def renyi_threshold_single(h: Histogram256, alpha: float) -> int:
    """Порог максимальной суммарной энтропии Реньи порядка alpha"""
    return best_cut(renyi_criterion(h, alpha))


def renyi_threshold(h: Histogram256) -> int:
    """
    Комбинированный порог по трем порядкам alpha = 0.5, 1, 2

    Пороги сортируются, веса (1, 2, 1), (0, 1, 3) или (3, 1, 0)
    выбираются по близости соседних порогов (не дальше 5 бинов).

    Returns:
        t: номер бина; передний план - бины > t
    """
    p = _check_histogram(h)
    p1 = np.cumsum(p)
    p2 = 1.0 - p1
    t1, t2, t3 = sorted(renyi_threshold_single(h, a) for a in (0.5, 1.0, 2.0))

    close12 = abs(t1 - t2) <= _CLOSE_BINS
    close23 = abs(t2 - t3) <= _CLOSE_BINS
    if close12 and not close23:
        beta = (0.0, 1.0, 3.0)
    elif close23 and not close12:
        beta = (3.0, 1.0, 0.0)
    else:
        beta = (1.0, 2.0, 1.0)

    omega = p1[t3] - p1[t1]
    value = (
        t1 * (p1[t1] + 0.25 * omega * beta[0])
        + 0.25 * t2 * omega * beta[1]
        + t3 * (p2[t3] + 0.25 * omega * beta[2])
    )
    return int(np.floor(value + 1e-9))


def renyi_segment(vol: Volume3D) -> Tuple[Volume3D, int]:
    """Бинаризация объема глобальным порогом Реньи"""
    t = renyi_threshold(Histogram256.from_volume(vol))
    mask = value_bins(vol.data) > t
    return vol.with_data(mask.astype(np.float32), VolumeKind.LABEL), t


def local_mean_std(
    values: np.ndarray, window_radius: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Среднее и стандартное отклонение в кубическом окне (края продолжаются)"""
    if window_radius < 1:
        raise ValueError(f"Радиус окна должен быть >= 1, получено {window_radius}")
    size = 2 * window_radius + 1
    v = np.asarray(values, dtype=np.float64)
    mean = uniform_filter(v, size=size, mode="nearest")
    sq_mean = uniform_filter(v * v, size=size, mode="nearest")
    std = np.sqrt(np.maximum(sq_mean - mean * mean, 0.0))
    return mean, std


def phansalkar_threshold(
    vol: Volume3D,
    window_radius: int = 3,
    k: float = 0.25,
    r: float = 0.5,
    p: float = 2.0,
    q: float = 10.0,
) -> Volume3D:
    """
    Локальный порог Phansalkar

    T = m * (1 + p * exp(-q * m) + k * (s / r - 1)), воксель = 1, если v > T

    Args:
        vol: Нормированный объем
        window_radius: Радиус кубического окна
        k, r, p, q: Параметры метода

    Returns:
        label: Бинарная маска
    """
    mean, std = local_mean_std(vol.data, window_radius)
    threshold = mean * (1.0 + p * np.exp(-q * mean) + k * (std / r - 1.0))
    mask = vol.data.astype(np.float64) > threshold
    return vol.with_data(mask.astype(np.float32), VolumeKind.LABEL)
