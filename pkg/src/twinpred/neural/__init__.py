"""Hand-differentiated LSTM encoder-decoder, Adam, training and MC-dropout."""

from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    ModelConfig,
    ModelParams,
    PredictionSet,
    backward,
    expected_param_count,
    forward,
    init_params,
    mc_dropout_predict,
    predict,
)
from .optim import AdamState, ReduceOnPlateau, adam_step
from .train import TrainConfig, TrainLog, infra_gradient, loss_and_gradients, train, validation_mse

__all__ = [
    "AdamState",
    "ModelConfig",
    "ModelParams",
    "PredictionSet",
    "ReduceOnPlateau",
    "TrainConfig",
    "TrainLog",
    "adam_step",
    "backward",
    "expected_param_count",
    "forward",
    "infra_gradient",
    "init_params",
    "load_checkpoint",
    "loss_and_gradients",
    "mc_dropout_predict",
    "predict",
    "save_checkpoint",
    "train",
    "validation_mse",
]
