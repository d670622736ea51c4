"""
Pydantic схемы для конфигурации и файлов набора
"""

from .manifest import MANIFEST, DatasetManifest, ManifestEntry, ThresholdRecord
from .run_config import (
    EFFECTIVE_CONFIG,
    PhantomDefaults,
    RunConfig,
    load_run_config,
    write_effective_config,
)

__all__ = [
    "MANIFEST",
    "DatasetManifest",
    "ManifestEntry",
    "ThresholdRecord",
    "EFFECTIVE_CONFIG",
    "PhantomDefaults",
    "RunConfig",
    "load_run_config",
    "write_effective_config",
]
