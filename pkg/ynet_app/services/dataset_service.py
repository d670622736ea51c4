"""
Сервис для работы с набором фантомов
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

from ynet_core.exceptions import OutputExists
from ynet_core.patches import LabeledVolume
from ynet_core.phantom import default_dataset, foreground_fraction
from ynet_core.volume import Volume3D, normalize_intensity, read_volume, write_volume

from ..schemas import DatasetManifest, ManifestEntry, RunConfig

logger = logging.getLogger(__name__)

IMAGE_SUFFIX = ".img.yvol"
LABEL_SUFFIX = ".lbl.yvol"


def ensure_output_dir(path: Union[str, Path], force: bool = False) -> Path:
    """Создание каталога результатов; непустой каталог требует force"""
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise OutputExists(f"Каталог {out} не пуст (используйте --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


class DatasetService:
    """Сервис для работы с набором фантомов"""

    def __init__(self, config: RunConfig):
        self.config = config

    def generate(
        self, data_dir: Union[str, Path], force: bool = False
    ) -> DatasetManifest:
        """Генерация набора и запись пар YVOL с описью"""
        out = ensure_output_dir(data_dir, force)
        phantom = self.config.phantom
        pairs = default_dataset(
            self.config.seed,
            phantom.n_train,
            phantom.n_val,
            phantom.n_test,
            phantom.dims,
        )

        entries = []
        for pair in pairs:
            image_name = pair.name + IMAGE_SUFFIX
            label_name = pair.name + LABEL_SUFFIX
            write_volume(pair.image, out / image_name)
            write_volume(pair.label, out / label_name)
            fraction = foreground_fraction(pair.label)
            logger.debug("%s: доля сосудов %.4f", pair.name, fraction)
            entries.append(
                ManifestEntry(
                    name=pair.name,
                    split=pair.split,
                    seed=pair.spec.seed,
                    image=image_name,
                    label=label_name,
                    foreground_fraction=fraction,
                    spec=pair.spec,
                )
            )

        manifest = DatasetManifest(
            seed=self.config.seed, dims=phantom.dims, pairs=entries
        )
        manifest.write(out)
        logger.info("Набор записан в %s: %d пар", out, len(entries))
        return manifest

    def load_manifest(self, data_dir: Union[str, Path]) -> DatasetManifest:
        """Чтение описи набора"""
        return DatasetManifest.read(data_dir)

    def prepare_image(self, image: Volume3D) -> Volume3D:
        """Нормализация интенсивностей, если она включена в конфигурации"""
        if not self.config.normalize_input:
            return image
        return normalize_intensity(image, self.config.p_lo, self.config.p_hi)

    def load_image(self, path: Union[str, Path]) -> Volume3D:
        """Чтение объема изображения с нормализацией"""
        return self.prepare_image(read_volume(path))

    def load_pair(
        self, data_dir: Union[str, Path], entry: ManifestEntry
    ) -> LabeledVolume:
        """Чтение пары (изображение, разметка)"""
        root = Path(data_dir)
        image = self.load_image(root / entry.image)
        label = read_volume(root / entry.label)
        return LabeledVolume(source_id=entry.name, image=image, label=label)

    def load_split(self, data_dir: Union[str, Path], split: str) -> List[LabeledVolume]:
        """Все пары одной части набора в порядке описи"""
        manifest = self.load_manifest(data_dir)
        pairs = [self.load_pair(data_dir, entry) for entry in manifest.split(split)]
        if not pairs:
            raise ValueError(f"В наборе {data_dir} нет пар части {split}")
        return pairs

    def validation_pairs(
        self, data_dir: Union[str, Path]
    ) -> List[Tuple[Volume3D, Volume3D]]:
        """Валидационные пары для калибровки порогов"""
        return [(p.image, p.label) for p in self.load_split(data_dir, "val")]
