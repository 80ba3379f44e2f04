"""Numpy neural-network kernels with hand-written backprop."""

from .gradcheck import GradCheckReport, NonFiniteGradient, grad_check, grad_check_report
from .layers import (
    LSTM,
    RNN,
    AvgPool1D,
    Conv1D,
    Dense,
    DenseBlock,
    Dropout,
    Flatten,
    Layer,
    ReLU,
    Sequential,
    ShapeMismatch,
    ToSequence,
)
from .losses import cross_entropy, cross_entropy_grad, log_softmax, one_hot, softmax
from .optim import AdamState, adam_step

__all__ = [
    "LSTM",
    "RNN",
    "AdamState",
    "AvgPool1D",
    "Conv1D",
    "Dense",
    "DenseBlock",
    "Dropout",
    "Flatten",
    "GradCheckReport",
    "Layer",
    "NonFiniteGradient",
    "ReLU",
    "Sequential",
    "ShapeMismatch",
    "ToSequence",
    "adam_step",
    "cross_entropy",
    "cross_entropy_grad",
    "grad_check",
    "grad_check_report",
    "log_softmax",
    "one_hot",
    "softmax",
]
