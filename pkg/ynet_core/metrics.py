"""
Метрики бинарной сегментации по вокселям
"""

from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .exceptions import DimMismatch, InvalidVolume
from .volume import Volume3D, VolumeKind

EXCELLENT_DSC = 0.7
TABLE_COLUMNS = ["model", "accuracy", "sensitivity", "specificity", "precision", "DSC"]


class EvalReport(BaseModel):
    """Матрица ошибок и пять метрик"""

    model_config = ConfigDict(frozen=True)

    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    dsc: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def excellent_agreement(self) -> bool:
        """DSC > 0.7"""
        return self.dsc > EXCELLENT_DSC

    def to_row(self, model: str) -> Dict[str, Union[str, float]]:
        return {
            "model": model,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "DSC": self.dsc,
        }


def _ratio(num: int, den: int, other_side_empty: bool) -> float:
    """num/den; при пустом знаменателе 1, если пуста и другая сторона, иначе 0"""
    if den > 0:
        return num / den
    return 1.0 if other_side_empty else 0.0


def confusion_counts(pred: np.ndarray, truth: np.ndarray) -> Tuple[int, int, int, int]:
    """(tp, fp, fn, tn) для бинарных массивов одинаковой формы"""
    if pred.shape != truth.shape:
        raise DimMismatch(f"Формы {pred.shape} и {truth.shape} различаются")
    p = np.asarray(pred).astype(bool)
    t = np.asarray(truth).astype(bool)
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(p.size - tp - fp - fn)
    return tp, fp, fn, tn


def report_from_counts(tp: int, fp: int, fn: int, tn: int) -> EvalReport:
    """
    Метрики из матрицы ошибок

    Пустые знаменатели: если обе маски пусты, dsc, sensitivity и precision
    равны 1; если пуста только одна, соответствующее отношение равно 0.
    """
    n = tp + fp + fn + tn
    pred_pos, truth_pos = tp + fp, tp + fn
    pred_neg, truth_neg = tn + fn, tn + fp
    return EvalReport(
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
        accuracy=(tp + tn) / n if n else 1.0,
        sensitivity=_ratio(tp, truth_pos, pred_pos == 0),
        specificity=_ratio(tn, truth_neg, pred_neg == 0),
        precision=_ratio(tp, pred_pos, truth_pos == 0),
        dsc=_ratio(2 * tp, 2 * tp + fp + fn, True),
    )


def evaluate(pred: Volume3D, truth: Volume3D) -> EvalReport:
    """
    Сравнение предсказанной маски с разметкой

    Args:
        pred: Предсказание (kind=Label)
        truth: Разметка (kind=Label)

    Returns:
        report: Матрица ошибок и метрики
    """
    if pred.dims != truth.dims:
        raise DimMismatch(f"Размеры {pred.dims} и {truth.dims} различаются")
    for v in (pred, truth):
        if v.kind is not VolumeKind.LABEL:
            raise InvalidVolume(f"Ожидалась метка, получено {v.kind.value}")
    return report_from_counts(*confusion_counts(pred.data, truth.data))


def reports_frame(rows: Sequence[Tuple[str, EvalReport]]) -> pd.DataFrame:
    """Таблица: model, accuracy, sensitivity, specificity, precision, DSC"""
    return pd.DataFrame(
        [report.to_row(name) for name, report in rows], columns=TABLE_COLUMNS
    )


def write_report_csv(
    rows: Sequence[Tuple[str, EvalReport]], path: Union[str, Path]
) -> None:
    reports_frame(rows).to_csv(path, index=False, float_format="%.5f")
