"""Minimal neural-network kernel: reverse-mode autodiff, CNN/GRU layers, Adam."""
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
from .layers import Conv1d, Dense, Gru, GruParams, Module, gru_sequence, gru_step
from .ops import (
    class_weights_from_counts,
    concat,
    conv1d,
    dense,
    flatten,
    log_softmax,
    maxpool1d,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    tanh,
    weighted_cross_entropy,
)
from .optim import Adam, OptimizerState, adam_step
from .tensor import Tensor, as_tensor, parameter
from .train import TrainConfig, TrainHistory, fit

__all__ = [
    "Adam", "Conv1d", "Dense", "Gru", "GruParams", "Module", "OptimizerState", "Tensor",
    "TrainConfig", "TrainHistory", "adam_step", "as_tensor", "class_weights_from_counts",
    "concat", "conv1d", "dense", "fit", "flatten", "grad_check", "gru_sequence", "gru_step",
    "load_checkpoint", "log_softmax", "maxpool1d", "parameter", "relative_error", "relu",
    "save_checkpoint", "sigmoid", "softmax", "softmax_cross_entropy", "tanh",
    "weighted_cross_entropy",
]
