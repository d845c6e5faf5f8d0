"""Trainable parameter container."""

import numpy as np


class Parameter:
    """A named trainable tensor with its gradient and optimizer state.

    ``lr_multiplier`` scales the optimizer's base learning rate for this
    parameter alone; a multiplier of exactly 0 freezes it (the optimizer
    never touches the value, so frozen parameters stay bit-identical).
    ``decay`` marks whether weight decay applies; biases set it False.
    ``version`` counts value mutations so saved layer contexts can detect
    that a backward pass would use stale activations.
    """

    def __init__(self, name, value, lr_multiplier=1.0, decay=True):
        self.name = str(name)
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)
        self.lr_multiplier = float(lr_multiplier)
        self.decay = bool(decay)
        self.version = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return (
            f"Parameter({self.name!r}, shape={self.value.shape}, "
            f"lr_multiplier={self.lr_multiplier})"
        )
