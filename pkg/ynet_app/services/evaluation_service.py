"""
Сервис оценки: метрики, эталонные методы и сводная таблица
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import pandas as pd

from ynet_core.baselines import BaselineKind, calibrate_frangi_threshold, run_baseline
from ynet_core.metrics import EvalReport, evaluate, reports_frame, write_report_csv
from ynet_core.volume import Volume3D, read_volume, write_mips, write_volume

from ..config import Settings
from ..schemas import RunConfig
from .dataset_service import DatasetService
from .prediction_service import PredictionService

logger = logging.getLogger(__name__)

TABLE_CSV = "table.csv"

_BASELINE_NAMES = {
    BaselineKind.RENYI: "Renyi",
    BaselineKind.PHANSALKAR: "Phansalkar",
    BaselineKind.FRANGI: "Frangi",
}


class EvaluationService:
    """Сравнение сегментаций с разметкой"""

    def __init__(self, config: RunConfig, settings: Settings, threads: int = 1):
        self.config = config
        self.settings = settings
        self.datasets = DatasetService(config)
        self.predictions = PredictionService(config, settings, threads)

    def evaluate_files(
        self, pred: Union[str, Path], truth: Union[str, Path]
    ) -> EvalReport:
        """Метрики по двум файлам меток"""
        return evaluate(read_volume(pred), read_volume(truth))

    def write_row(
        self, name: str, report: EvalReport, path: Union[str, Path]
    ) -> None:
        """CSV из одной строки"""
        write_report_csv([(name, report)], path)

    def baseline(
        self,
        which: BaselineKind,
        image: Volume3D,
        frangi_threshold: Optional[float] = None,
        val_pairs: Optional[Sequence[Tuple[Volume3D, Volume3D]]] = None,
    ) -> Volume3D:
        """Сегментация эталонным методом; порог Frangi калибруется на val_pairs"""
        which = BaselineKind(which)
        if which is BaselineKind.FRANGI and frangi_threshold is None:
            if not val_pairs:
                raise ValueError("Для Frangi нужен порог или валидационный набор")
            frangi_threshold = calibrate_frangi_threshold(
                val_pairs,
                self.config.frangi,
                objective=self.config.calibration_objective,
            )
        return run_baseline(
            image,
            which,
            frangi_binarize_threshold=frangi_threshold,
            frangi_params=self.config.frangi,
            phansalkar_radius=self.config.phansalkar_radius,
        )

    def run_baseline_file(
        self,
        which: BaselineKind,
        volume: Union[str, Path],
        out: Union[str, Path],
        frangi_threshold: Optional[float] = None,
        data_dir: Optional[Union[str, Path]] = None,
    ) -> Volume3D:
        """Эталонный метод по файлу с записью YVOL и MIP"""
        val_pairs = None
        if BaselineKind(which) is BaselineKind.FRANGI and frangi_threshold is None:
            if data_dir is None:
                raise ValueError("Для Frangi нужен --threshold или --data-dir")
            val_pairs = self.datasets.validation_pairs(data_dir)
        image = self.datasets.load_image(volume)
        label = self.baseline(which, image, frangi_threshold, val_pairs)
        out_path = Path(out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_volume(label, out_path)
        write_mips(label, out_path.with_suffix(""))
        return label

    def table(
        self,
        checkpoint: Union[str, Path],
        data_dir: Union[str, Path],
        out_dir: Union[str, Path],
        extra_thresholds: Sequence[float] = (),
        ablation: Optional[Union[str, Path]] = None,
    ) -> pd.DataFrame:
        """
        Сводная таблица на первой тестовой паре

        Строки: Y-net с откалиброванным порогом, Y-net с дополнительными
        порогами, модель без позиционного пути (если задана) и три
        эталонных метода.

        Returns:
            frame: model, accuracy, sensitivity, specificity, precision, DSC
        """
        test = self.datasets.load_split(data_dir, "test")[0]
        val_pairs = self.datasets.validation_pairs(data_dir)
        rows: List[Tuple[str, EvalReport]] = []

        models = [(checkpoint, "")]
        if ablation is not None:
            models.append((ablation, " no localization"))
        for path, tag in models:
            model = self.predictions.load_model(path)
            probability = self.predictions.probability(model, test.image)
            t = self.predictions.calibrate(model, val_pairs)
            thresholds = [t] + ([] if tag else list(extra_thresholds))
            for threshold in thresholds:
                label = self.predictions.segment(model, probability, threshold)
                name = f"Y-net ({threshold:.2f}){tag}"
                rows.append((name, evaluate(label, test.label)))

        for which in BaselineKind:
            label = self.baseline(which, test.image, val_pairs=val_pairs)
            rows.append((_BASELINE_NAMES[which], evaluate(label, test.label)))

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(rows, out / TABLE_CSV)
        for name, report in rows:
            logger.info("%s: DSC %.5f", name, report.dsc)
        return reports_frame(rows)
