from .layers import (
    Layer,
    Dense,
    Conv2D,
    BatchNorm2D,
    MaxPool2D,
    Dropout,
    ReLU,
    Flatten,
    glorot_uniform,
)
from .functional import softmax_time_distributed, log_softmax
from .recurrent import LSTM, BiLSTM, reverse_valid, zero_pads
from .optim import TrainConfig, Adam, clip_global_norm
from .gradcheck import finite_diff_check, numeric_gradient

__all__ = [
    "Layer",
    "Dense",
    "Conv2D",
    "BatchNorm2D",
    "MaxPool2D",
    "Dropout",
    "ReLU",
    "Flatten",
    "glorot_uniform",
    "softmax_time_distributed",
    "log_softmax",
    "LSTM",
    "BiLSTM",
    "reverse_valid",
    "zero_pads",
    "TrainConfig",
    "Adam",
    "clip_global_norm",
    "finite_diff_check",
    "numeric_gradient",
]
