"""Gradient boosting over untrained, randomly generated single-layer networks."""

from .booster import (
    BoosterModel,
    ModelFormatError,
    RoundModel,
    TrainConfig,
    load_model,
    predict,
    save_model,
    train,
)
from .dataset import SparseDataset, load_libsvm, parse_libsvm
from .estimator import GBUNClassifier, GBUNRegressor

__all__ = [
    "BoosterModel",
    "GBUNClassifier",
    "GBUNRegressor",
    "ModelFormatError",
    "RoundModel",
    "SparseDataset",
    "TrainConfig",
    "load_libsvm",
    "load_model",
    "parse_libsvm",
    "predict",
    "save_model",
    "train",
]

__version__ = "0.1.0"
