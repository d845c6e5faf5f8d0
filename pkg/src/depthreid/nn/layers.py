"""Feed-forward layers with explicit forward/backward passes.

Every layer follows the same protocol: ``forward(x, mode, rng)`` returns the
output and stashes whatever the gradient needs, ``backward(dy)`` returns the
gradient with respect to the input and accumulates into the parameters'
``grad`` buffers. Layers that own parameters record the parameter versions
at forward time and refuse to run backward after an optimizer step has
mutated the values under them.

All math is float64. Convolution is computed directly (im2col plus one
matmul); pooling is non-overlapping with deterministic first-index tie
breaking.
"""

import numpy as np

from ..validation import NonFiniteError, ShapeError, check_finite, check_ndim
from .params import Parameter

MODES = ("train", "eval")


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")


class Layer:
    """Base protocol; subclasses fill in the actual math."""

    def params(self):
        return []

    def forward(self, x, mode="train", rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _snapshot_versions(self):
        self._versions = tuple(p.version for p in self.params())

    def _check_versions(self):
        current = tuple(p.version for p in self.params())
        if current != self._versions:
            raise RuntimeError(
                f"{type(self).__name__}: backward after parameter update; "
                "rerun forward before calling backward"
            )


class Dense(Layer):
    """Fully connected layer, y = x @ W + b.

    Weights are (n_in, n_out) and default to He-scaled normal init; pass
    ``weight_std`` to override (classifier heads use 0.01). The bias is
    excluded from weight decay.
    """

    def __init__(self, name, n_in, n_out, rng, weight_std=None, lr_multiplier=1.0):
        if n_in < 1 or n_out < 1:
            raise ValueError(f"{name}: layer extents must be positive")
        std = np.sqrt(2.0 / n_in) if weight_std is None else float(weight_std)
        self.name = name
        self.weight = Parameter(
            f"{name}.weight", rng.normal((n_in, n_out), std=std),
            lr_multiplier=lr_multiplier, decay=True,
        )
        self.bias = Parameter(
            f"{name}.bias", np.zeros(n_out),
            lr_multiplier=lr_multiplier, decay=False,
        )

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = check_ndim(np.asarray(x, dtype=np.float64), 2, self.name)
        if x.shape[1] != self.weight.shape[0]:
            raise ShapeError(
                f"{self.name}: input width {x.shape[1]} does not match "
                f"weight extent {self.weight.shape[0]}"
            )
        check_finite(x, self.name)
        self._x = x
        self._snapshot_versions()
        return x @ self.weight.value + self.bias.value

    def backward(self, dy):
        self._check_versions()
        dy = np.asarray(dy, dtype=np.float64)
        self.weight.grad += self._x.T @ dy
        self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value.T


def _im2col(x, k, stride, pad):
    """Unfold (B,C,H,W) into rows of flattened k-by-k patches."""
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    sb, sc, sh, sw = x.strides
    win = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, k, k, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    cols = win.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * k * k)
    return np.ascontiguousarray(cols), oh, ow


class Conv2d(Layer):
    """2-d convolution with square kernels over (B, C, H, W) maps."""

    def __init__(self, name, c_in, c_out, rng, kernel=3, stride=1, pad=1,
                 weight_std=None, lr_multiplier=1.0):
        if min(c_in, c_out, kernel, stride) < 1 or pad < 0:
            raise ValueError(f"{name}: invalid convolution geometry")
        std = np.sqrt(2.0 / (c_in * kernel * kernel)) if weight_std is None else float(weight_std)
        self.name = name
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        self.c_in = c_in
        self.c_out = c_out
        self.weight = Parameter(
            f"{name}.weight", rng.normal((c_out, c_in, kernel, kernel), std=std),
            lr_multiplier=lr_multiplier, decay=True,
        )
        self.bias = Parameter(
            f"{name}.bias", np.zeros(c_out),
            lr_multiplier=lr_multiplier, decay=False,
        )

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = check_ndim(np.asarray(x, dtype=np.float64), 4, self.name)
        if x.shape[1] != self.c_in:
            raise ShapeError(
                f"{self.name}: expected {self.c_in} input channels, got {x.shape[1]}"
            )
        if x.shape[2] + 2 * self.pad < self.kernel or x.shape[3] + 2 * self.pad < self.kernel:
            raise ShapeError(f"{self.name}: input {x.shape} smaller than kernel")
        check_finite(x, self.name)
        cols, oh, ow = _im2col(x, self.kernel, self.stride, self.pad)
        wmat = self.weight.value.reshape(self.c_out, -1)
        out = cols @ wmat.T + self.bias.value
        self._x = x
        self._extents = (oh, ow)
        self._snapshot_versions()
        b = x.shape[0]
        return out.reshape(b, oh, ow, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        self._check_versions()
        b, _, h, w = self._x.shape
        oh, ow = self._extents
        dflat = np.asarray(dy, dtype=np.float64).transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        cols, _, _ = _im2col(self._x, self.kernel, self.stride, self.pad)
        wmat = self.weight.value.reshape(self.c_out, -1)
        self.weight.grad += (dflat.T @ cols).reshape(self.weight.shape)
        self.bias.grad += dflat.sum(axis=0)
        dcols = (dflat @ wmat).reshape(b, oh, ow, self.c_in, self.kernel, self.kernel)
        dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
        hp, wp = h + 2 * self.pad, w + 2 * self.pad
        dxp = np.zeros((b, self.c_in, hp, wp))
        s = self.stride
        for i in range(self.kernel):
            for j in range(self.kernel):
                dxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += dcols[:, :, i, j]
        if self.pad:
            return dxp[:, :, self.pad:-self.pad, self.pad:-self.pad]
        return dxp


class MaxPool2d(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill
    a window are dropped. Ties route the gradient to the first maximum."""

    def __init__(self, size=2):
        if size < 1:
            raise ValueError("pooling window must be positive")
        self.size = size

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = check_ndim(np.asarray(x, dtype=np.float64), 4, "maxpool")
        check_finite(x, "maxpool")
        k = self.size
        b, c, h, w = x.shape
        oh, ow = h // k, w // k
        if oh < 1 or ow < 1:
            raise ShapeError(f"maxpool: input {x.shape} smaller than window {k}")
        win = x[:, :, :oh * k, :ow * k].reshape(b, c, oh, k, ow, k)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, k * k)
        self._idx = win.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(win, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        k = self.size
        b, c, h, w = self._in_shape
        oh, ow = h // k, w // k
        dwin = np.zeros((b, c, oh, ow, k * k))
        np.put_along_axis(dwin, self._idx[..., None],
                          np.asarray(dy, dtype=np.float64)[..., None], axis=-1)
        dwin = dwin.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(self._in_shape)
        dx[:, :, :oh * k, :ow * k] = dwin.reshape(b, c, oh * k, ow * k)
        return dx


class ReLU(Layer):
    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        check_finite(x, "relu")
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.asarray(dy, dtype=np.float64) * self._mask


class Sigmoid(Layer):
    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        check_finite(x, "sigmoid")
        self._y = sigmoid(x)
        return self._y

    def backward(self, dy):
        y = self._y
        return np.asarray(dy, dtype=np.float64) * y * (1.0 - y)


class Tanh(Layer):
    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        check_finite(x, "tanh")
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return np.asarray(dy, dtype=np.float64) * (1.0 - self._y ** 2)


class Softmax(Layer):
    """Row-wise softmax over the last axis."""

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        check_finite(x, "softmax")
        self._y = softmax(x)
        return self._y

    def backward(self, dy):
        y = self._y
        dy = np.asarray(dy, dtype=np.float64)
        inner = (dy * y).sum(axis=-1, keepdims=True)
        return y * (dy - inner)


class Dropout(Layer):
    """Inverted dropout: active units are scaled by 1/(1-rate) in train
    mode so that eval mode is the identity."""

    def __init__(self, rate):
        rate = float(rate)
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, mode="train", rng=None):
        _check_mode(mode)
        x = np.asarray(x, dtype=np.float64)
        check_finite(x, "dropout")
        if mode == "eval" or self.rate == 0.0:
            self._scaled_mask = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        keep = rng.uniform(x.shape) >= self.rate
        self._scaled_mask = keep / (1.0 - self.rate)
        return x * self._scaled_mask

    def backward(self, dy):
        dy = np.asarray(dy, dtype=np.float64)
        if self._scaled_mask is None:
            return dy
        return dy * self._scaled_mask


def sigmoid(x):
    """Numerically stable logistic function."""
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis=-1):
    """Stable softmax along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, labels, mask=None):
    """Mean cross-entropy of softmax(logits) against integer labels.

    ``mask`` (same length as labels, 0/1) drops rows from both the loss
    and the gradient; the mean runs over unmasked rows only.

    Returns:
        (loss, dlogits): scalar loss and the gradient w.r.t. logits.
    """
    logits = check_ndim(np.asarray(logits, dtype=np.float64), 2, "logits")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"labels: expected shape ({logits.shape[0]},), got {labels.shape}"
        )
    if mask is None:
        mask = np.ones(logits.shape[0])
    mask = np.asarray(mask, dtype=np.float64)
    total = mask.sum()
    if total <= 0:
        raise ValueError("cross entropy over an empty batch")
    probs = softmax(logits)
    picked = probs[np.arange(logits.shape[0]), labels]
    loss = float((-np.log(np.maximum(picked, 1e-300)) * mask).sum() / total)
    dlogits = probs.copy()
    dlogits[np.arange(logits.shape[0]), labels] -= 1.0
    dlogits *= (mask / total)[:, None]
    return loss, dlogits
