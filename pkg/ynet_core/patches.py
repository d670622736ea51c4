"""
Извлечение патчей с балансировкой классов и поток пакетов по эпохам

Положительные патчи берутся по сетке с малым шагом (хотя бы один воксель
сосуда в окне), отрицательные - по более редкой сетке, шаг которой
подбирается по доле отобранных положительных, так чтобы количества были
сопоставимы.
"""

import logging
import queue
import threading
from dataclasses import dataclass
from typing import (
    Any,
    Generator,
    Iterable,
    Iterator,
    List,
    NamedTuple,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import DimMismatch, NoPositives, VolumeTooSmall
from .rng import STREAM_EPOCH, make_rng
from .volume import Volume3D

logger = logging.getLogger(__name__)

PATCH_SIZE = 16


class SamplingPlan(BaseModel):
    """Параметры выборки патчей"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    stride_pos: int = Field(20, ge=1)
    batch_cap: int = Field(2048, ge=1)
    patch_size: int = Field(PATCH_SIZE, ge=1)

    def offset_for(self, epoch_index: int) -> int:
        """Смещение сетки эпохи: epoch mod stride_pos"""
        return epoch_index % self.stride_pos


@dataclass(frozen=True, eq=False)
class PatchRecord:
    """Патч изображения и разметки с позицией в исходном объеме"""

    image_patch: np.ndarray
    label_patch: np.ndarray
    origin: Tuple[int, int, int]
    source_id: str
    volume_dims: Tuple[int, int, int]


class LabeledVolume(NamedTuple):
    """Обучающая пара с идентификатором"""

    source_id: str
    image: Volume3D
    label: Volume3D


@dataclass(frozen=True)
class VolumeSampling:
    """Статистика выборки одного объема за эпоху"""

    source_id: str
    offset: int
    stride_neg: int
    n_candidates: int
    n_positive: int
    n_negative: int


def grid_origins(
    dim: int, stride: int, offset: int, patch_size: int = PATCH_SIZE
) -> List[int]:
    """
    Начала окон по одной оси: offset + k*stride <= dim - patch_size,
    плюс последнее окно, прижатое к краю
    """
    last = dim - patch_size
    if last < 0:
        raise VolumeTooSmall(f"Размер {dim} меньше патча {patch_size}")
    origins = list(range(offset, last + 1, stride)) if offset <= last else []
    if not origins or origins[-1] != last:
        origins.append(last)
    return origins


def _grid(dims: Sequence[int], stride: int, offset: int, patch_size: int) -> np.ndarray:
    """Все начала окон (x, y, z) сетки, x меняется быстрее всего"""
    xs, ys, zs = (grid_origins(d, stride, offset, patch_size) for d in dims)
    zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def _integral(label: np.ndarray) -> np.ndarray:
    """Кумулятивная сумма с нулевым краем для сумм по окнам"""
    s = np.zeros(tuple(n + 1 for n in label.shape), dtype=np.int64)
    s[1:, 1:, 1:] = label.astype(np.int64).cumsum(0).cumsum(1).cumsum(2)
    return s


def _window_sums(integral: np.ndarray, origins: np.ndarray, p: int) -> np.ndarray:
    x0, y0, z0 = origins[:, 0], origins[:, 1], origins[:, 2]
    x1, y1, z1 = x0 + p, y0 + p, z0 + p
    s = integral
    return (
        s[z1, y1, x1]
        - s[z0, y1, x1]
        - s[z1, y0, x1]
        - s[z1, y1, x0]
        + s[z0, y0, x1]
        + s[z0, y1, x0]
        + s[z1, y0, x0]
        - s[z0, y0, x0]
    )


def _check_pair(vol: Volume3D, label: Volume3D, patch_size: int) -> None:
    if vol.dims != label.dims:
        raise DimMismatch(f"Изображение {vol.dims} и разметка {label.dims} различаются")
    if min(vol.dims) < patch_size:
        raise VolumeTooSmall(f"Объем {vol.dims} меньше патча {patch_size}")


def _records(
    vol: Volume3D, label: Volume3D, origins: np.ndarray, p: int, source_id: str
) -> List[PatchRecord]:
    records = []
    for x, y, z in origins:
        window = (slice(z, z + p), slice(y, y + p), slice(x, x + p))
        records.append(
            PatchRecord(
                image_patch=vol.data[window],
                label_patch=label.data[window],
                origin=(int(x), int(y), int(z)),
                source_id=source_id,
                volume_dims=vol.dims,
            )
        )
    return records


def count_grid_candidates(
    dims: Sequence[int], stride: int, offset: int, patch_size: int = PATCH_SIZE
) -> int:
    n = 1
    for d in dims:
        n *= len(grid_origins(d, stride, offset, patch_size))
    return n


def extract_positive(
    vol: Volume3D,
    label: Volume3D,
    stride_pos: int,
    offset: int,
    patch_size: int = PATCH_SIZE,
    source_id: str = "",
) -> List[PatchRecord]:
    """
    Патчи сетки с шагом stride_pos, содержащие хотя бы один воксель сосуда

    Args:
        vol: Изображение
        label: Разметка той же формы
        stride_pos: Шаг сетки
        offset: Смещение сетки эпохи
        patch_size: Ребро патча
        source_id: Идентификатор объема

    Returns:
        records: Патчи в порядке обхода сетки (x быстрее всего)
    """
    _check_pair(vol, label, patch_size)
    origins = _grid(vol.dims, stride_pos, offset, patch_size)
    sums = _window_sums(_integral(label.data), origins, patch_size)
    return _records(vol, label, origins[sums > 0], patch_size, source_id)


def extract_negative(
    vol: Volume3D,
    label: Volume3D,
    stride_neg: int,
    offset: int,
    patch_size: int = PATCH_SIZE,
    source_id: str = "",
) -> List[PatchRecord]:
    """Патчи редкой сетки, в разметке которых нет ни одного вокселя сосуда"""
    _check_pair(vol, label, patch_size)
    origins = _grid(vol.dims, stride_neg, offset, patch_size)
    sums = _window_sums(_integral(label.data), origins, patch_size)
    return _records(vol, label, origins[sums == 0], patch_size, source_id)


def estimate_negative_stride(
    n_positive_kept: int, n_grid_candidates: int, stride_pos: int
) -> int:
    """
    Шаг отрицательной сетки по доле отобранных положительных патчей

    stride_neg = max(stride_pos, round(stride_pos * (candidates / kept)^(1/3)))
    """
    if n_positive_kept < 1:
        raise NoPositives("Нет положительных патчей, балансировка невозможна")
    ratio = n_grid_candidates / n_positive_kept
    return max(stride_pos, int(np.floor(stride_pos * ratio ** (1.0 / 3.0) + 0.5)))


def extract_balanced(
    volume: LabeledVolume, stride_pos: int, offset: int, patch_size: int = PATCH_SIZE
) -> Tuple[List[PatchRecord], List[PatchRecord], VolumeSampling]:
    """Положительный и отрицательный проходы по одному объему"""
    image, label = volume.image, volume.label
    source = volume.source_id
    positive = extract_positive(image, label, stride_pos, offset, patch_size, source)
    candidates = count_grid_candidates(image.dims, stride_pos, offset, patch_size)
    if not positive:
        logger.warning("%s: нет патчей с сосудами, объем пропущен", volume.source_id)
        stats = VolumeSampling(volume.source_id, offset, stride_pos, candidates, 0, 0)
        return [], [], stats
    stride_neg = estimate_negative_stride(len(positive), candidates, stride_pos)
    negative = extract_negative(image, label, stride_neg, offset, patch_size, source)
    stats = VolumeSampling(
        volume.source_id, offset, stride_neg, candidates, len(positive), len(negative)
    )
    return positive, negative, stats


def _epoch_batches(
    dataset: Sequence[LabeledVolume],
    epoch_index: int,
    plan: SamplingPlan,
    rng_seed: int,
) -> Generator[List[PatchRecord], None, None]:
    offset = plan.offset_for(epoch_index)
    rng = make_rng(rng_seed, STREAM_EPOCH, epoch_index)
    buffer: List[PatchRecord] = []
    for vi in rng.permutation(len(dataset)):
        positive, negative, stats = extract_balanced(
            dataset[vi], plan.stride_pos, offset, plan.patch_size
        )
        logger.debug(
            "%s: offset=%d stride_neg=%d pos=%d neg=%d",
            stats.source_id,
            stats.offset,
            stats.stride_neg,
            stats.n_positive,
            stats.n_negative,
        )
        records = positive + negative
        buffer.extend(records[i] for i in rng.permutation(len(records)))
        while len(buffer) >= plan.batch_cap:
            yield buffer[: plan.batch_cap]
            buffer = buffer[plan.batch_cap :]
    if buffer:
        yield buffer


class BackgroundGenerator(threading.Thread):
    """
    Фоновый производитель: выполняет итератор в отдельном потоке и
    передает элементы через ограниченную очередь в исходном порядке
    """

    _DONE = object()

    def __init__(self, source: Iterable, capacity: int = 1):
        super().__init__(daemon=True)
        self._source = source
        self._queue: "queue.Queue" = queue.Queue(maxsize=max(1, capacity))
        self._stop_event = threading.Event()
        self._error: Optional[BaseException] = None
        self.start()

    def _put(self, item: object) -> bool:
        while not self._stop_event.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def run(self) -> None:
        try:
            for item in self._source:
                if not self._put(item):
                    return
        except BaseException as e:  # передается потребителю
            self._error = e
        self._put(self._DONE)

    def close(self) -> None:
        self._stop_event.set()

    def __iter__(self) -> Iterator:
        return self.items()

    def items(self) -> Generator[Any, None, None]:
        """Элементы источника; закрытие генератора останавливает поток"""
        try:
            while True:
                item = self._queue.get()
                if item is self._DONE:
                    if self._error is not None:
                        raise self._error
                    return
                yield item
        finally:
            self.close()


def epoch_stream(
    dataset: Sequence[LabeledVolume],
    epoch_index: int,
    plan: SamplingPlan,
    rng_seed: int,
    threads: int = 1,
    queue_capacity: int = 1,
) -> Generator[List[PatchRecord], None, None]:
    """
    Пакеты патчей одной эпохи

    Порядок объемов перемешивается, положительные и отрицательные патчи
    объема перемешиваются вместе, пакеты режутся подряд по batch_cap,
    последний короткий пакет тоже выдается.

    Args:
        dataset: Обучающие пары
        epoch_index: Номер эпохи (с нуля)
        plan: Параметры выборки
        rng_seed: Зерно
        threads: 1 - синхронно, больше - извлечение в фоновом потоке
        queue_capacity: Емкость очереди в пакетах

    Returns:
        Генератор пакетов; порядок не зависит от threads, close() останавливает
        фоновый поток
    """
    if not dataset:
        raise ValueError("Пустой набор данных")
    batches = _epoch_batches(dataset, epoch_index, plan, rng_seed)
    if threads <= 1:
        return batches
    return BackgroundGenerator(batches, capacity=queue_capacity).items()


def stack_batch(
    records: Sequence[PatchRecord],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Сборка пакета для сети

    Returns:
        (images, labels, origins): (B, 1, p, p, p), (B, 1, p, p, p), (B, 3)
    """
    images = np.stack([r.image_patch for r in records])[:, None]
    labels = np.stack([r.label_patch for r in records])[:, None]
    origins = np.array([r.origin for r in records], dtype=np.int64).reshape(-1, 3)
    return images, labels, origins
