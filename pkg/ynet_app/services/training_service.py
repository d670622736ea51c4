"""
Сервис обучения Y-net
"""

import logging
from pathlib import Path
from typing import Union

from ynet_core.trainer import TrainResult, train
from ynet_core.ynet import build

from ..config import Settings
from ..schemas import RunConfig, write_effective_config
from .dataset_service import DatasetService, ensure_output_dir

logger = logging.getLogger(__name__)


class TrainingService:
    """Обучение модели на фантомах из каталога набора"""

    def __init__(self, config: RunConfig, settings: Settings):
        self.config = config
        self.settings = settings
        self.datasets = DatasetService(config)

    def record_timing(self, threads: int) -> bool:
        """Время эпох пишется только в многопоточном запуске"""
        # --threads 1 дает побайтово воспроизводимый train_log.csv
        return self.settings.YNET_RECORD_TIMING and threads > 1

    def run(
        self,
        data_dir: Union[str, Path],
        out_dir: Union[str, Path],
        threads: int = 1,
        force: bool = False,
    ) -> TrainResult:
        """Обучение с записью best.ynet, снимков, журнала и конфигурации"""
        out = ensure_output_dir(out_dir, force)
        write_effective_config(self.config, out)

        train_set = self.datasets.load_split(data_dir, "train")
        val_set = self.datasets.load_split(data_dir, "val")
        model = build(self.config.model, self.config.seed)
        logger.info(
            "Модель: %d уровней, %d ядер, позиция %s, %d параметров",
            self.config.model.n_levels,
            self.config.model.base_kernels,
            self.config.model.position_site.value,
            model.n_parameters(),
        )
        return train(
            model,
            train_set,
            val_set,
            self.config.schedule,
            self.config.sampling,
            seed=self.config.seed,
            out_dir=out,
            threads=threads,
            record_timing=self.record_timing(threads),
        )
