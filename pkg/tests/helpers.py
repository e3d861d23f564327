"""Shared test utilities."""

from __future__ import annotations

import numpy as np

from elp.nn.autograd import Tensor


def numeric_grad(f, arr: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / scale)


def check_grads(build, tensors: list[Tensor], h: float = 1e-3) -> float:
    """Worst relative error between backprop and central differences.

    ``build()`` returns a scalar Tensor computed from ``tensors``.
    """
    for t in tensors:
        t.grad = None
    build().backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        gn = numeric_grad(lambda: float(build().data), t.data, h)
        worst = max(worst, rel_error(ga, gn))
    return worst
