"""
Pydantic схема конфигурации запуска
"""

import json
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ynet_core.exceptions import BadConfig, IoFailure
from ynet_core.frangi import FrangiParams
from ynet_core.patches import SamplingPlan
from ynet_core.phantom import DEFAULT_DIMS
from ynet_core.trainer import TrainSchedule
from ynet_core.ynet import YNetConfig

EFFECTIVE_CONFIG = "effective_config.json"


class PhantomDefaults(BaseModel):
    """Размер набора фантомов"""

    model_config = ConfigDict(extra="forbid")

    n_train: int = Field(8, ge=1)
    n_val: int = Field(2, ge=1)
    n_test: int = Field(1, ge=1)
    dims: Tuple[int, int, int] = DEFAULT_DIMS


class RunConfig(BaseModel):
    """Все настраиваемые параметры запуска; у каждого поля есть значение по умолчанию"""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(7, ge=0, lt=2**64)
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    phantom: PhantomDefaults = Field(default_factory=PhantomDefaults)
    model: YNetConfig = Field(default_factory=YNetConfig)
    sampling: SamplingPlan = Field(default_factory=lambda: SamplingPlan(stride_pos=8))
    schedule: TrainSchedule = Field(default_factory=lambda: TrainSchedule(patience=10))
    frangi: FrangiParams = Field(default_factory=FrangiParams)

    normalize_input: bool = False
    p_lo: float = Field(1.0, ge=0, le=100)
    p_hi: float = Field(99.0, ge=0, le=100)
    phansalkar_radius: int = Field(3, ge=1)
    calibration_objective: Literal["accuracy", "dsc"] = "accuracy"

    @model_validator(mode="after")
    def _sync_patch_size(self) -> "RunConfig":
        if self.p_lo >= self.p_hi:
            raise ValueError(f"p_lo={self.p_lo} должен быть меньше p_hi={self.p_hi}")
        # Размер патча выборки всегда равен размеру входа сети
        if self.sampling.patch_size != self.model.patch_size:
            self.sampling = self.sampling.model_copy(
                update={"patch_size": self.model.patch_size}
            )
        return self


def _set_path(data: Dict[str, Any], dotted: str, value: Any) -> None:
    node = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
    node[leaf] = value


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = ".".join(str(p) for p in item["loc"])
        parts.append(f"{key}: {item['msg']}")
    return "; ".join(parts)


def load_run_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """
    Чтение JSON конфигурации и применение переопределений из флагов

    Args:
        path: Путь к JSON (None - значения по умолчанию)
        overrides: {"model.n_levels": 1, ...}; значения None пропускаются

    Returns:
        config: Проверенная конфигурация
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise IoFailure(f"Не удалось прочитать {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise BadConfig(f"{path}: некорректный JSON: {e}") from e
        if not isinstance(data, dict):
            raise BadConfig(f"{path}: ожидался JSON объект")
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_path(data, key, value)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise BadConfig(f"Недопустимая конфигурация: {_describe(e)}") from e


def write_effective_config(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    path = Path(out_dir) / EFFECTIVE_CONFIG
    text = json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path
