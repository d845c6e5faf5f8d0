"""Minimal neural-network core: parameters, layers, SGD, gradient checks."""

from .gradcheck import grad_check, relative_error
from .layers import (
    Conv2d,
    Dense,
    Dropout,
    Layer,
    MaxPool2d,
    ReLU,
    Sigmoid,
    Softmax,
    Tanh,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from .optim import SGD
from .params import Parameter
from .rng import RngStream

__all__ = [
    "Conv2d", "Dense", "Dropout", "Layer", "MaxPool2d", "Parameter", "ReLU",
    "RngStream", "SGD", "Sigmoid", "Softmax", "Tanh", "grad_check",
    "relative_error", "sigmoid", "softmax", "softmax_cross_entropy",
]
