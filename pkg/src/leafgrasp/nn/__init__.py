"""Numpy implementation of the grasp-quality CNN."""

from .model import GraspPointCNN, ModelWeights, forward, init_weights, parameter_count
from .serialize import WeightsFormatError, load_weights, save_weights
from .train import TrainConfig, TrainLog, train

__all__ = [
    "GraspPointCNN",
    "ModelWeights",
    "TrainConfig",
    "TrainLog",
    "WeightsFormatError",
    "forward",
    "init_weights",
    "load_weights",
    "parameter_count",
    "save_weights",
    "train",
]
