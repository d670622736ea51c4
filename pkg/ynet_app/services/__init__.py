"""
Сервисы прикладного уровня
"""

from .dataset_service import DatasetService, ensure_output_dir
from .evaluation_service import EvaluationService
from .prediction_service import PredictionResult, PredictionService, volume_stem
from .training_service import TrainingService

__all__ = [
    "DatasetService",
    "EvaluationService",
    "PredictionResult",
    "PredictionService",
    "TrainingService",
    "ensure_output_dir",
    "volume_stem",
]
