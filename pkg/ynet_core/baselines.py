"""
Эталонные методы сегментации для сравнения с Y-net
"""

import logging
from enum import Enum
from typing import Optional, Sequence, Tuple

from .frangi import FrangiParams, frangi_vesselness
from .predictor import THRESHOLD_STEP, binarize, calibrate_from_probabilities
from .thresholds import phansalkar_threshold, renyi_segment
from .volume import Volume3D

logger = logging.getLogger(__name__)

PHANSALKAR_RADIUS = 3


class BaselineKind(str, Enum):
    RENYI = "renyi"
    PHANSALKAR = "phansalkar"
    FRANGI = "frangi"


def calibrate_frangi_threshold(
    val_pairs: Sequence[Tuple[Volume3D, Volume3D]],
    params: Optional[FrangiParams] = None,
    step: float = THRESHOLD_STEP,
    objective: str = "accuracy",
) -> float:
    """Порог сосудистости, выбранный на валидации так же, как порог Y-net"""
    if not val_pairs:
        raise ValueError("Пустой валидационный набор")
    maps = [frangi_vesselness(image, params).data for image, _ in val_pairs]
    labels = [label.data for _, label in val_pairs]
    t, score = calibrate_from_probabilities(maps, labels, step, objective)
    logger.info("Порог Frangi %.2f (%s = %.5f)", t, objective, score)
    return t


def run_baseline(
    vol: Volume3D,
    which: BaselineKind,
    frangi_binarize_threshold: Optional[float] = None,
    frangi_params: Optional[FrangiParams] = None,
    phansalkar_radius: int = PHANSALKAR_RADIUS,
) -> Volume3D:
    """
    Бинарная сегментация эталонным методом

    Args:
        vol: Нормированный объем
        which: Метод
        frangi_binarize_threshold: Порог сосудистости (обязателен для Frangi)
        frangi_params: Параметры Frangi
        phansalkar_radius: Радиус окна Phansalkar

    Returns:
        label: Volume3D(kind=Label)
    """
    which = BaselineKind(which)
    if which is BaselineKind.RENYI:
        label, t = renyi_segment(vol)
        logger.info("Renyi: порог бин %d", t)
        return label
    if which is BaselineKind.PHANSALKAR:
        return phansalkar_threshold(vol, window_radius=phansalkar_radius)
    if frangi_binarize_threshold is None:
        raise ValueError("Для Frangi нужен порог бинаризации")
    return binarize(frangi_vesselness(vol, frangi_params), frangi_binarize_threshold)
