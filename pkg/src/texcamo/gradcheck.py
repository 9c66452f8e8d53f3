"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad, zero_grad


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest relative disagreement between backprop and central differences.

    ``f`` must rebuild its graph from ``params`` on every call. For each entry
    the error is ``|a - n| / max(1e-8, |a| + |n|)``. A non-finite value of
    ``f`` anywhere makes the check fail with ``inf``.
    """
    zero_grad(params)
    loss = f()
    if not np.isfinite(loss.data).all():
        return math.inf
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = f().item()
                flat[i] = orig - eps
                fm = f().item()
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                return math.inf
            numeric = (fp - fm) / (2.0 * eps)
            a = analytic[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    zero_grad(params)
    return worst
