"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """d f / d arr by central differences; ``arr`` is perturbed in place and restored."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(loss_fn: Callable[[], Tensor], tensors: dict, eps: float = 1e-4) -> dict:
    """Compare backward() against central differences for each named leaf tensor.

    ``loss_fn`` must rebuild the graph from the current ``.data`` of the
    leaves on every call and return a scalar tensor. Returns the max relative
    error per name.
    """
    for t in tensors.values():
        t.grad = None
    loss_fn().backward()
    analytic = {n: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
                for n, t in tensors.items()}

    def value():
        return float(loss_fn().data)

    return {n: max_relative_error(analytic[n], numeric_grad(value, t.data, eps))
            for n, t in tensors.items()}
