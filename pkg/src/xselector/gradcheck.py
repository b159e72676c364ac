"""Central finite-difference verification of hand-written gradients."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


def finite_difference_gradients(
    loss_fn: Callable[[], float],
    arrays: Mapping[str, np.ndarray],
    step: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Numeric gradient of `loss_fn` with respect to every entry of `arrays`.

    The arrays are perturbed in place and restored, so `loss_fn` must read the
    same live arrays.
    """
    grads: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr, dtype=float)
        flat = arr.ravel()
        gflat = grad.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            f_plus = loss_fn()
            flat[i] = original - step
            f_minus = loss_fn()
            flat[i] = original
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads[name] = grad
    return grads


def max_relative_error(
    analytic: Mapping[str, np.ndarray],
    numeric: Mapping[str, np.ndarray],
    floor: float = 1e-4,
) -> float:
    """Worst elementwise relative error between two gradient sets.

    The denominator is floored so that entries much smaller than `floor` are
    effectively compared by absolute difference: central differences of an
    O(1) loss carry ~1e-11 of roundoff, which would otherwise dominate the
    ratio on near-zero gradients.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
