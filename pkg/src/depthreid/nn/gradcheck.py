"""Central finite-difference gradient verification.

``grad_check`` compares analytic gradients against (f(x+eps) - f(x-eps)) /
(2 eps) element by element and reports the worst relative error

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

The fragment under test must be deterministic: the loss closure is invoked
twice up front and any bit-level disagreement is rejected, since finite
differences against a moving target are meaningless. Fragments containing
dropout should rebuild their rng stream from a fixed seed inside the
closure.
"""

import numpy as np


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def grad_check(params, loss_fn, backward_fn, epsilon=1e-5,
               entries_per_param=None, rng=None):
    """Verify analytic gradients of a scalar-valued fragment.

    Args:
        params: Parameters whose gradients are checked.
        loss_fn: () -> float, a pure forward pass of the fragment.
        backward_fn: () -> None, runs forward + backward once, leaving
            gradients accumulated in ``param.grad``.
        epsilon: central-difference step.
        entries_per_param: if given, check only this many randomly chosen
            entries per parameter (large fragments); None checks all.
        rng: RngStream used to pick sampled entries.

    Returns:
        The maximum relative error over all checked entries.
    """
    params = list(params)
    for p in params:
        if p.value.dtype != np.float64:
            raise TypeError(f"{p.name}: grad_check requires float64 parameters")

    first, second = float(loss_fn()), float(loss_fn())
    if first != second or not np.isfinite(first):
        raise ValueError(
            "grad_check: fragment is not deterministic "
            f"({first!r} vs {second!r}); fix the mode or the rng seeding"
        )

    for p in params:
        p.zero_grad()
    backward_fn()
    analytic = {p.name: p.grad.copy() for p in params}
    for p in params:
        p.zero_grad()

    if entries_per_param is not None and rng is None:
        raise ValueError("sampled grad_check needs an rng to pick entries")

    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if entries_per_param is None or entries_per_param >= n:
            indices = range(n)
        else:
            indices = rng.choice(n, size=entries_per_param, replace=False)
        a_flat = analytic[p.name].reshape(-1)
        for i in indices:
            saved = flat[i]
            flat[i] = saved + epsilon
            up = float(loss_fn())
            flat[i] = saved - epsilon
            down = float(loss_fn())
            flat[i] = saved
            numeric = (up - down) / (2.0 * epsilon)
            worst = max(worst, float(relative_error(a_flat[i], numeric)))
    return worst
