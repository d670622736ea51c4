"""
YNet Core - сегментация сосудов в 3D объемах сверточным автоэнкодером с нуля
"""

__version__ = "0.1.0"
__author__ = "YNet Vessel Playground"

from .baselines import BaselineKind, run_baseline
from .frangi import FrangiParams, frangi_vesselness
from .metrics import EvalReport, evaluate
from .patches import SamplingPlan, epoch_stream
from .phantom import PhantomSpec, TubeSpec, default_dataset, generate_phantom
from .predictor import binarize, calibrate_threshold, morphology, predict_volume
from .trainer import TrainSchedule, train
from .volume import Volume3D, VolumeKind, read_volume, write_volume
from .ynet import YNetConfig, YNetModel, build, load_checkpoint, save_checkpoint

__all__ = [
    "Volume3D",
    "VolumeKind",
    "read_volume",
    "write_volume",
    "PhantomSpec",
    "TubeSpec",
    "generate_phantom",
    "default_dataset",
    "YNetConfig",
    "YNetModel",
    "build",
    "save_checkpoint",
    "load_checkpoint",
    "SamplingPlan",
    "epoch_stream",
    "TrainSchedule",
    "train",
    "predict_volume",
    "calibrate_threshold",
    "binarize",
    "morphology",
    "FrangiParams",
    "frangi_vesselness",
    "BaselineKind",
    "run_baseline",
    "EvalReport",
    "evaluate",
]
