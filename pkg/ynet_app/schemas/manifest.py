"""
Pydantic схемы описи набора данных и результатов
"""

import json
from pathlib import Path
from typing import List, Optional, Tuple, Union

from pydantic import BaseModel, ValidationError

from ynet_core.exceptions import BadConfig, IoFailure
from ynet_core.phantom import PhantomSpec

MANIFEST = "manifest.json"


class ManifestEntry(BaseModel):
    """Пара файлов набора"""

    name: str
    split: str
    seed: int
    image: str
    label: str
    foreground_fraction: float
    spec: PhantomSpec


class DatasetManifest(BaseModel):
    """Опись набора фантомов"""

    seed: int
    dims: Tuple[int, int, int]
    pairs: List[ManifestEntry]

    def split(self, name: str) -> List[ManifestEntry]:
        return [p for p in self.pairs if p.split == name]

    def write(self, data_dir: Union[str, Path]) -> Path:
        path = Path(data_dir) / MANIFEST
        text = json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)
        path.write_text(text + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, data_dir: Union[str, Path]) -> "DatasetManifest":
        path = Path(data_dir) / MANIFEST
        try:
            raw = path.read_text(encoding="utf-8")
        except OSError as e:
            raise IoFailure(f"Не удалось прочитать {path}: {e}") from e
        try:
            return cls.model_validate_json(raw)
        except ValidationError as e:
            raise BadConfig(f"{path}: некорректная опись: {e}") from e


class ThresholdRecord(BaseModel):
    """JSON рядом с результатом предсказания"""

    checkpoint: str
    volume: str
    threshold: float
    calibrated: bool
    objective: Optional[str] = None
    morphology: str = "none"
