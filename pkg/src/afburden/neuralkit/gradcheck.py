"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor

DENOM_FLOOR = 1e-6


def relative_error(analytic, numeric, floor: float = DENOM_FLOOR) -> np.ndarray:
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(loss_fn: Callable[[], Tensor], p: Tensor, eps: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(loss_fn().data)
        flat[i] = orig - eps
        down = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def grad_check(loss_fn: Callable[[], Tensor], params: dict[str, Tensor] | list,
               eps: float = 1e-5, max_elements: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn`` must rebuild the graph from the current parameter values on
    every call. The denominator of the relative error is floored at 1e-6 so
    that gradients that are zero on both sides do not divide by zero. With
    ``max_elements`` only a random subset of entries per parameter is probed.
    """
    if not isinstance(params, dict):
        params = {str(i): p for i, p in enumerate(params)}
    for p in params.values():
        p.grad = None
    loss_fn().backward()
    analytic = {k: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for k, p in params.items()}
    worst = 0.0
    for k, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_elements, replace=False)
        a = analytic[k].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            worst = max(worst, float(relative_error(a[i], (up - down) / (2 * eps))))
    return worst
