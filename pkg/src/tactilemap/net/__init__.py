"""Convolutional surface-normal estimator."""

from .model import (
    ModelWeights,
    NetConfig,
    NormalNet,
    build_input,
    forward,
    infer_normals,
    load_weights,
    save_weights,
)
from .train import TrainConfig, TrainingError, evaluate, masked_cosine_loss, train, write_history

__all__ = [
    "ModelWeights", "NetConfig", "NormalNet", "TrainConfig", "TrainingError",
    "build_input", "evaluate", "forward", "infer_normals", "load_weights",
    "masked_cosine_loss", "save_weights", "train", "write_history",
]
