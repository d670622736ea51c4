"""
Сервис предсказания по целым объемам
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from ynet_core.predictor import (
    binarize,
    calibrate_threshold,
    morphology,
    predict_volume,
)
from ynet_core.volume import Volume3D, write_mips, write_volume
from ynet_core.ynet import YNetModel, load_checkpoint

from ..config import Settings
from ..schemas import RunConfig, ThresholdRecord
from .dataset_service import DatasetService

logger = logging.getLogger(__name__)

PROBABILITY_SUFFIX = ".prob.yvol"
SEGMENTATION_SUFFIX = ".seg.yvol"
THRESHOLD_SUFFIX = ".threshold.json"


def volume_stem(path: Union[str, Path]) -> str:
    """Имя объема без .yvol и без .img"""
    name = Path(path).name
    for suffix in (".yvol", ".img", ".lbl", ".prob", ".seg"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return name


@dataclass
class PredictionResult:
    probability: Volume3D
    label: Volume3D
    threshold: float
    paths: List[Path]


class PredictionService:
    """Предсказание, калибровка порога и запись результатов"""

    def __init__(self, config: RunConfig, settings: Settings, threads: int = 1):
        self.config = config
        self.settings = settings
        self.threads = threads
        self.datasets = DatasetService(config)

    def load_model(self, checkpoint: Union[str, Path]) -> YNetModel:
        """Чтение чекпоинта"""
        return load_checkpoint(checkpoint)

    def probability(self, model: YNetModel, image: Volume3D) -> Volume3D:
        """Вероятностная карта объема"""
        return predict_volume(
            model, image, self.settings.YNET_PREDICT_BATCH, self.threads
        )

    def calibrate(
        self, model: YNetModel, val_pairs: Sequence[Tuple[Volume3D, Volume3D]]
    ) -> float:
        """Порог по валидационным парам"""
        return calibrate_threshold(
            model,
            val_pairs,
            objective=self.config.calibration_objective,
            batch_size=self.settings.YNET_PREDICT_BATCH,
            threads=self.threads,
        )

    def segment(self, model: YNetModel, probability: Volume3D, t: float) -> Volume3D:
        """Бинаризация и морфологическая постобработка из конфигурации модели"""
        return morphology(binarize(probability, t), model.config.morphology_post)

    def run(
        self,
        checkpoint: Union[str, Path],
        volume: Union[str, Path],
        out_dir: Union[str, Path],
        threshold: Optional[float] = None,
        data_dir: Optional[Union[str, Path]] = None,
    ) -> PredictionResult:
        """
        Предсказание по объему с записью YVOL, MIP и JSON с порогом

        Args:
            checkpoint: Файл .ynet
            volume: Объем изображения
            out_dir: Каталог результатов
            threshold: Порог; None - калибровка на валидации из data_dir
            data_dir: Каталог набора с описью

        Returns:
            result: Вероятности, метки, порог и записанные файлы
        """
        if threshold is None and data_dir is None:
            raise ValueError("Нужен порог или каталог набора для калибровки")
        if threshold is not None and not 0.0 <= threshold <= 1.0:
            raise ValueError(f"Порог должен лежать в [0, 1], получено {threshold}")

        model = self.load_model(checkpoint)
        image = self.datasets.load_image(volume)
        probability = self.probability(model, image)

        calibrated = threshold is None
        if threshold is None:
            assert data_dir is not None
            threshold = self.calibrate(model, self.datasets.validation_pairs(data_dir))
        label = self.segment(model, probability, threshold)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = volume_stem(volume)
        prob_path = out / (stem + PROBABILITY_SUFFIX)
        label_path = out / (stem + SEGMENTATION_SUFFIX)
        write_volume(probability, prob_path)
        write_volume(label, label_path)
        paths = [prob_path, label_path]
        paths += write_mips(probability, out / (stem + ".prob"))
        paths += write_mips(label, out / (stem + ".seg"))

        record = ThresholdRecord(
            checkpoint=str(checkpoint),
            volume=str(volume),
            threshold=threshold,
            calibrated=calibrated,
            objective=self.config.calibration_objective if calibrated else None,
            morphology=model.config.morphology_post.value,
        )
        sidecar = out / (stem + THRESHOLD_SUFFIX)
        sidecar.write_text(record.model_dump_json(indent=2) + "\n", encoding="utf-8")
        paths.append(sidecar)
        return PredictionResult(probability, label, threshold, paths)
