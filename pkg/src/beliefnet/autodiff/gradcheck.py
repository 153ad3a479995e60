"""Central finite-difference oracle, independent of the tape."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def numerical_grads(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    out = []
    with no_grad():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                fp = float(f().data)
                flat[i] = old - eps
                fm = float(f().data)
                flat[i] = old
                gflat[i] = (fp - fm) / (2 * eps)
            out.append(g)
    return out


def max_relative_error(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
                       floor: float = 1e-6) -> float:
    """Worst element-wise |analytic - numeric| / max(|analytic| + |numeric|, floor)."""
    for p in params:
        p.grad = None
    backward(f())
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    numeric = numerical_grads(f, params, eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(err.max(initial=0.0)))
    return worst


def sampled_relative_error(f: Callable[[], Tensor], params: Sequence[Tensor], per_param: int = 6,
                           seed: int = 0, eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Like ``max_relative_error`` but probes ``per_param`` random entries of each tensor.

    Meant for models too large to perturb every weight.
    """
    for p in params:
        p.grad = None
    backward(f())
    rng = np.random.default_rng(seed)
    worst = 0.0
    with no_grad():
        for p in params:
            analytic = np.zeros(p.data.size) if p.grad is None else p.grad.reshape(-1).copy()
            flat = p.data.reshape(-1)
            for i in rng.choice(flat.size, size=min(per_param, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + eps
                fp = float(f().data)
                flat[i] = old - eps
                fm = float(f().data)
                flat[i] = old
                num = (fp - fm) / (2 * eps)
                err = abs(analytic[i] - num) / max(abs(analytic[i]) + abs(num), floor)
                worst = max(worst, err)
    return worst
