"""Finite-difference verification of backward rules."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

__all__ = ["grad_check"]


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Compare analytic gradients of a scalar-valued f against central
    differences, coordinate by coordinate.

    Returns the max over coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    Inputs with requires_grad=False are skipped. Run at float64; float32
    rounding drowns the difference quotient.
    """
    with no_grad():
        v0 = f(*inputs).item()
        v1 = f(*inputs).item()
    if v0 != v1:
        raise ValueError("grad_check requires a deterministic function")

    for t in inputs:
        t.zero_grad()
    out = f(*inputs)
    if out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    out.backward()

    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        aflat = analytic.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            with no_grad():
                fp = f(*inputs).item()
            flat[idx] = orig - eps
            with no_grad():
                fm = f(*inputs).item()
            flat[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(float(aflat[idx]) - numeric) / max(abs(float(aflat[idx])), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
