"""
Предсказание по целому объему: перекрывающиеся патчи, усреднение,
калибровка порога, бинаризация и морфология
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .exceptions import DimMismatch, VolumeTooSmall
from .metrics import confusion_counts, report_from_counts
from .patches import grid_origins
from .volume import Volume3D, VolumeKind
from .ynet import Morphology, PatchModel, normalized_centers

logger = logging.getLogger(__name__)

THRESHOLD_STEP = 0.01
OBJECTIVES = ("accuracy", "dsc")

# Крест 3x3x3 (6-связность)
STRUCTURE_6 = ndimage.generate_binary_structure(3, 1)


def prediction_origins(dims: Sequence[int], patch_size: int) -> np.ndarray:
    """
    Начала патчей с шагом patch/2 и последним окном у края

    Returns:
        origins: (n, 3) в порядке (x, y, z), x меняется быстрее всего
    """
    if min(dims) < patch_size:
        raise VolumeTooSmall(f"Объем {tuple(dims)} меньше патча {patch_size}")
    stride = max(1, patch_size // 2)
    xs, ys, zs = (grid_origins(d, stride, 0, patch_size) for d in dims)
    zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def coverage_count(dims: Sequence[int], patch_size: int) -> np.ndarray:
    """Количество патчей, покрывающих каждый воксель, форма (nz, ny, nx)"""
    nx, ny, nz = dims
    count = np.zeros((nz, ny, nx), dtype=np.int32)
    p = patch_size
    for x, y, z in prediction_origins(dims, patch_size):
        count[z : z + p, y : y + p, x : x + p] += 1
    return count


def _chunks(origins: np.ndarray, size: int) -> Iterator[np.ndarray]:
    for i in range(0, len(origins), size):
        yield origins[i : i + size]


def predict_volume(
    model: PatchModel, vol: Volume3D, batch_size: int = 32, threads: int = 1
) -> Volume3D:
    """
    Вероятностная карта объема

    Выходы перекрывающихся патчей суммируются и делятся на число покрытий.
    Пакеты считаются параллельно, накопление идет последовательно в
    порядке пакетов.

    Args:
        model: Модель с predict(batch, centers) и patch_size
        vol: Объем интенсивностей
        batch_size: Патчей за один вызов модели
        threads: Потоков для инференса

    Returns:
        probability: Volume3D(kind=Probability) той же формы
    """
    p = model.patch_size
    dims = vol.dims
    origins = prediction_origins(dims, p)
    data = vol.data

    def run(chunk: np.ndarray) -> np.ndarray:
        batch = np.stack(
            [data[z : z + p, y : y + p, x : x + p] for x, y, z in chunk]
        )[:, None]
        return model.predict(batch, normalized_centers(chunk, dims, p))

    total = np.zeros(data.shape, dtype=np.float64)
    count = np.zeros(data.shape, dtype=np.int32)

    def accumulate(chunk: np.ndarray, out: np.ndarray) -> None:
        for (x, y, z), patch in zip(chunk, out[:, 0]):
            total[z : z + p, y : y + p, x : x + p] += patch
            count[z : z + p, y : y + p, x : x + p] += 1

    chunks = list(_chunks(origins, batch_size))
    if threads <= 1:
        for chunk in chunks:
            accumulate(chunk, run(chunk))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for chunk, out in zip(chunks, pool.map(run, chunks)):
                accumulate(chunk, out)

    probability = np.clip(total / count, 0.0, 1.0)
    logger.debug("Предсказание %s: %d патчей", dims, len(origins))
    return vol.with_data(probability, VolumeKind.PROBABILITY)


def threshold_grid(step: float = THRESHOLD_STEP) -> np.ndarray:
    """Пороги {0, step, ..., 1}"""
    n = int(round(1.0 / step))
    return np.linspace(0.0, 1.0, n + 1)


def calibrate_from_probabilities(
    probabilities: Sequence[np.ndarray],
    labels: Sequence[np.ndarray],
    step: float = THRESHOLD_STEP,
    objective: str = "accuracy",
) -> Tuple[float, float]:
    """
    Порог, максимизирующий среднюю по объемам точность (или DSC)

    При равенстве выбирается меньший порог.

    Returns:
        (threshold, score)
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"Неизвестная цель калибровки: {objective}")
    if not probabilities or len(probabilities) != len(labels):
        raise ValueError("Нужны непустые и согласованные списки вероятностей и меток")

    best_t, best_score = 0.0, -np.inf
    for t in threshold_grid(step):
        scores: List[float] = []
        for prob, label in zip(probabilities, labels):
            if prob.shape != label.shape:
                raise DimMismatch(f"Формы {prob.shape} и {label.shape} различаются")
            counts = confusion_counts(prob >= t, label)
            report = report_from_counts(*counts)
            scores.append(report.accuracy if objective == "accuracy" else report.dsc)
        score = float(np.mean(scores))
        if score > best_score:
            best_t, best_score = float(t), score
    return best_t, best_score


def calibrate_threshold(
    model: PatchModel,
    val_pairs: Sequence[Tuple[Volume3D, Volume3D]],
    grid_step: float = THRESHOLD_STEP,
    objective: str = "accuracy",
    batch_size: int = 32,
    threads: int = 1,
) -> float:
    """
    Калибровка порога на валидационных парах (изображение, разметка)

    Args:
        model: Модель
        val_pairs: Пары (изображение, разметка)
        grid_step: Шаг сетки порогов
        objective: "accuracy" или "dsc"

    Returns:
        threshold: Порог из {0, 0.01, ..., 1}
    """
    if not val_pairs:
        raise ValueError("Пустой валидационный набор")
    probabilities = [
        predict_volume(model, image, batch_size, threads).data for image, _ in val_pairs
    ]
    labels = [label.data for _, label in val_pairs]
    t, score = calibrate_from_probabilities(probabilities, labels, grid_step, objective)
    logger.info("Порог %.2f (%s = %.5f)", t, objective, score)
    return t


def binarize(p: Volume3D, t: float) -> Volume3D:
    """Воксель = 1, если p >= t"""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"Порог должен лежать в [0, 1], получено {t}")
    return p.with_data((p.data >= t).astype(np.float32), VolumeKind.LABEL)


def morphology(lbl: Volume3D, op: Morphology) -> Volume3D:
    """
    Закрытие (дилатация, затем эрозия) или открытие (эрозия, затем
    дилатация) крестом 3x3x3

    Вне объема считается фон.
    """
    op = Morphology(op)
    if op is Morphology.NONE:
        return lbl
    mask = np.pad(lbl.data.astype(bool), 1)
    if op is Morphology.CLOSING:
        mask = ndimage.binary_dilation(mask, structure=STRUCTURE_6)
        mask = ndimage.binary_erosion(mask, structure=STRUCTURE_6)
    else:
        mask = ndimage.binary_erosion(mask, structure=STRUCTURE_6)
        mask = ndimage.binary_dilation(mask, structure=STRUCTURE_6)
    return lbl.with_data(mask[1:-1, 1:-1, 1:-1].astype(np.float32), VolumeKind.LABEL)
