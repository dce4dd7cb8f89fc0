"""Time-distributed CNN + LSTM classifier, trained with hand-written backprop."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    ModelConfig, ModelParams, SegmentPrediction, ShapeError, ShapePlan, forward, init_params,
    loss_and_gradients, predict_proba, predict_segments, shape_plan,
)
from .train import History, TrainConfig, TrainingDiverged, evaluate, train

__all__ = [
    "ModelConfig", "ModelParams", "SegmentPrediction", "ShapeError", "ShapePlan", "forward", "init_params",
    "loss_and_gradients", "predict_proba", "predict_segments", "shape_plan",
    "History", "TrainConfig", "TrainingDiverged", "evaluate", "train",
    "load_checkpoint", "save_checkpoint",
]
