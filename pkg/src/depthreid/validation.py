"""Shared input-validation helpers.

Every public entry point funnels array checks through these so that a bad
input fails with a message naming the offending argument instead of a
numpy broadcast error three layers down.
"""

import numpy as np


class ShapeError(ValueError):
    """An array argument has the wrong shape or dimensionality."""


class NonFiniteError(ValueError):
    """An array argument contains NaN or infinity."""


def as_float_array(x, name):
    """Coerce to a float64 ndarray, rejecting non-numeric input."""
    arr = np.asarray(x)
    if arr.dtype == object:
        raise TypeError(f"{name}: expected numeric array, got object dtype")
    return arr.astype(np.float64, copy=False)


def check_finite(x, name):
    if not np.isfinite(x).all():
        raise NonFiniteError(f"{name}: contains non-finite values")
    return x


def check_ndim(x, ndim, name):
    if x.ndim != ndim:
        raise ShapeError(f"{name}: expected {ndim} dimensions, got shape {x.shape}")
    return x


def check_shape(x, shape, name):
    """Check shape against a template; None entries match any extent."""
    if len(x.shape) != len(shape) or any(
        want is not None and got != want for got, want in zip(x.shape, shape)
    ):
        raise ShapeError(f"{name}: expected shape {shape}, got {x.shape}")
    return x


def check_axis_size(x, axis, size, name):
    if x.shape[axis] != size:
        raise ShapeError(
            f"{name}: expected extent {size} on axis {axis}, got {x.shape[axis]}"
        )
    return x


def check_labels(y, n_classes, name="labels"):
    """Integer class labels in [0, n_classes)."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected 1-d label array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(arr == arr.astype(np.int64)):
            raise TypeError(f"{name}: labels must be integers")
        arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
        raise ValueError(
            f"{name}: labels must lie in [0, {n_classes}), "
            f"found range [{arr.min()}, {arr.max()}]"
        )
    return arr.astype(np.int64, copy=False)


def check_probability(p, name):
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name}: expected a probability in [0, 1], got {p}")
    return p
