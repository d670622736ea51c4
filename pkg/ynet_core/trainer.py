"""
Обучение Y-net: эпохи, валидация, сохранение лучшей модели, журнал потерь
"""

import logging
import time
from contextlib import closing
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import DivergedLoss
from .optim import AdamState, adam_step
from .patches import (
    LabeledVolume,
    PatchRecord,
    SamplingPlan,
    epoch_stream,
    extract_balanced,
    stack_batch,
)
from .rng import STREAM_MINIBATCH, make_rng
from .tensor_ops import bce_logits_backward, bce_loss
from .ynet import PatchModel, YNetModel, normalized_centers, save_checkpoint

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BEST_CHECKPOINT = "best.ynet"
TRAIN_LOG = "train_log.csv"


class TrainSchedule(BaseModel):
    """Расписание обучения"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    epoch_multiplier: int = Field(30, ge=1)
    max_epochs: Optional[int] = Field(None, ge=1)
    validate_every: int = Field(5, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-8, gt=0)
    minibatch_size: int = Field(32, ge=1)
    patience: Optional[int] = Field(None, ge=1)
    snapshot_epochs: List[int] = Field(default_factory=list)
    n_train_images: Optional[int] = Field(None, ge=1)

    def epochs_total(self, plan: SamplingPlan) -> int:
        """30 * stride_pos, ограничено max_epochs"""
        total = self.epoch_multiplier * plan.stride_pos
        return min(total, self.max_epochs) if self.max_epochs else total

    def is_validation_epoch(self, epoch: int, epochs_total: int) -> bool:
        return epoch % self.validate_every == 0 or epoch == epochs_total - 1


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: Optional[float] = None
    seconds: Optional[float] = None


@dataclass
class TrainLog:
    """Журнал обучения по эпохам"""

    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_loss: Optional[float] = None
    stopped_early: bool = False

    @property
    def validation_epochs(self) -> List[int]:
        return [r.epoch for r in self.records if r.val_loss is not None]

    def to_frame(self, record_timing: bool = True) -> pd.DataFrame:
        df = pd.DataFrame(
            {
                "epoch": [r.epoch for r in self.records],
                "train_loss": [r.train_loss for r in self.records],
                "val_loss": [r.val_loss for r in self.records],
                "seconds": [r.seconds if record_timing else None for r in self.records],
            }
        )
        return df

    def write_csv(self, path: PathLike, record_timing: bool = True) -> None:
        self.to_frame(record_timing).to_csv(path, index=False, float_format="%.8g")


@dataclass
class TrainResult:
    best_model: YNetModel
    log: TrainLog
    final_model: YNetModel


def batch_centers(records: Sequence[PatchRecord], patch_size: int) -> np.ndarray:
    """Нормированные центры патчей (B, 3) с учетом размеров исходных объемов"""
    return np.concatenate(
        [normalized_centers([r.origin], r.volume_dims, patch_size) for r in records]
    )


def _chunks(items: Sequence, size: int) -> List[Sequence]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def validation_loss(
    model: PatchModel,
    val_set: Sequence[LabeledVolume],
    plan: SamplingPlan,
    chunk_size: int = 64,
) -> float:
    """
    Средняя по вокселям BCE на сбалансированных патчах валидационных объемов
    (смещение сетки 0)

    Args:
        model: Модель
        val_set: Валидационные пары
        plan: Параметры выборки
        chunk_size: Патчей за один прямой проход

    Returns:
        loss: Среднее по всем вокселям всех патчей
    """
    if not val_set:
        raise ValueError("Пустой валидационный набор")
    total, n_voxels = 0.0, 0
    for volume in val_set:
        positive, negative, _ = extract_balanced(
            volume, plan.stride_pos, 0, plan.patch_size
        )
        for chunk in _chunks(positive + negative, chunk_size):
            images, labels, _ = stack_batch(chunk)
            pred = model.predict(images, batch_centers(chunk, model.patch_size))
            total += bce_loss(pred, labels) * labels.size
            n_voxels += labels.size
    if n_voxels == 0:
        raise ValueError("В валидационных объемах нет ни одного патча")
    return total / n_voxels


def _train_step(
    model: YNetModel,
    params: List[np.ndarray],
    state: AdamState,
    records: Sequence[PatchRecord],
) -> Tuple[YNetModel, List[np.ndarray], AdamState, float]:
    images, labels, _ = stack_batch(records)
    centers = batch_centers(records, model.patch_size)
    out, tape = model.forward_train(images, centers)
    loss = bce_loss(out, labels)
    if not np.isfinite(loss):
        raise DivergedLoss(f"Потери стали {loss}")
    grads = model.backward(tape, bce_logits_backward(out, labels), wrt_logits=True)
    params, state = adam_step(params, grads, state)
    return model.with_parameters(params), params, state, loss


def train(
    model: YNetModel,
    train_set: Sequence[LabeledVolume],
    val_set: Sequence[LabeledVolume],
    schedule: TrainSchedule,
    plan: SamplingPlan,
    seed: int = 0,
    out_dir: Optional[PathLike] = None,
    threads: int = 1,
    record_timing: bool = True,
) -> TrainResult:
    """
    Обучение модели по расписанию

    Args:
        model: Начальная модель
        train_set: Обучающие пары
        val_set: Валидационные пары
        schedule: Расписание
        plan: Параметры выборки патчей
        seed: Зерно для перемешивания
        out_dir: Каталог для best.ynet, снимков и train_log.csv
        threads: Потоков извлечения патчей
        record_timing: Записывать ли время эпох в CSV

    Returns:
        result: Лучшая по валидации модель, журнал и модель после последней эпохи
    """
    if not train_set or not val_set:
        raise ValueError("Обучающий и валидационный наборы не должны быть пустыми")
    if schedule.n_train_images is not None:
        train_set = list(train_set)[: schedule.n_train_images]
    out_path = Path(out_dir) if out_dir is not None else None

    epochs_total = schedule.epochs_total(plan)
    params = model.parameters()
    state = AdamState.zeros_like(
        params,
        lr=schedule.learning_rate,
        beta1=schedule.beta1,
        beta2=schedule.beta2,
        epsilon=schedule.epsilon,
    )
    log = TrainLog()
    best_model = model.copy()
    checks_without_improvement = 0
    logger.info(
        "Обучение: %d эпох, %d обучающих объемов, %d параметров",
        epochs_total,
        len(train_set),
        model.n_parameters(),
    )

    for epoch in range(epochs_total):
        started = time.perf_counter()
        mb_rng = make_rng(seed, STREAM_MINIBATCH, epoch)
        loss_sum, n_voxels = 0.0, 0
        stream = epoch_stream(train_set, epoch, plan, seed, threads=threads)
        # Поток производителя останавливается и при исключении в шаге
        with closing(stream) as batches:
            for batch in batches:
                batch = [batch[i] for i in mb_rng.permutation(len(batch))]
                for chunk in _chunks(batch, schedule.minibatch_size):
                    model, params, state, loss = _train_step(
                        model, params, state, chunk
                    )
                    voxels = len(chunk) * plan.patch_size**3
                    loss_sum += loss * voxels
                    n_voxels += voxels
        train_loss = loss_sum / n_voxels if n_voxels else float("nan")
        record = EpochRecord(epoch=epoch, train_loss=train_loss)

        if schedule.is_validation_epoch(epoch, epochs_total):
            val = validation_loss(model, val_set, plan, schedule.minibatch_size)
            record.val_loss = val
            if log.best_val_loss is None or val < log.best_val_loss:
                log.best_val_loss, log.best_epoch = val, epoch
                best_model = model.copy()
                checks_without_improvement = 0
                if out_path is not None:
                    save_checkpoint(best_model, out_path / BEST_CHECKPOINT)
            else:
                checks_without_improvement += 1
            logger.info(
                "Эпоха %d: валидация %.6f (лучшая %.6f на эпохе %d)",
                epoch,
                val,
                log.best_val_loss,
                log.best_epoch,
            )

        if out_path is not None and (epoch + 1) in schedule.snapshot_epochs:
            save_checkpoint(model, out_path / f"epoch_{epoch + 1}.ynet")

        record.seconds = time.perf_counter() - started
        log.records.append(record)
        logger.info(
            "Эпоха %d/%d: loss=%.6f (%.1f с)",
            epoch + 1,
            epochs_total,
            train_loss,
            record.seconds,
        )

        patience = schedule.patience
        if patience is not None and checks_without_improvement >= patience:
            logger.info(
                "Ранняя остановка: %d проверок без улучшения",
                checks_without_improvement,
            )
            log.stopped_early = True
            break

    if out_path is not None:
        log.write_csv(out_path / TRAIN_LOG, record_timing=record_timing)
    return TrainResult(best_model=best_model, log=log, final_model=model)
