from .checkpoint import load_checkpoint, save_checkpoint
from .training import TrainConfig, TrainingError, TrainingLog, evaluate_jaccard, train
from .unet import SatUnet, UnetConfig, build_sat_unet

__all__ = [
    "SatUnet",
    "UnetConfig",
    "build_sat_unet",
    "TrainConfig",
    "TrainingError",
    "TrainingLog",
    "train",
    "evaluate_jaccard",
    "save_checkpoint",
    "load_checkpoint",
]
