"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    coords: np.ndarray | None = None,
) -> float:
    """Compare the autodiff gradient of scalar ``f`` at ``x`` with central differences.

    ``x`` must have ``requires_grad=True``; ``f`` may close over other tensors.
    Returns max |analytic - numeric| / max(1, |analytic|) over the checked
    coordinates (all of them unless ``coords`` gives flat indices).
    """
    x.grad = None
    f(x).backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    flat_grad = analytic.reshape(-1)
    idx = range(flat.size) if coords is None else np.asarray(coords).reshape(-1)
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            up = f(x).item()
            flat[i] = orig - h
            down = f(x).item()
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            worst = max(worst, abs(flat_grad[i] - numeric) / max(1.0, abs(flat_grad[i])))
    return worst
