"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-4) -> np.ndarray:
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f().data.sum())
        flat[i] = orig - h
        fm = float(f().data.sum())
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error scaled by the larger gradient magnitude (floored at 1e-8)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    h: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between backprop and finite differences over ``inputs``.

    ``f`` must rebuild its graph from the current ``inputs`` on every call and
    return a tensor; non-scalar outputs are summed. With ``max_entries`` only a
    random subset of each input's coordinates is probed.
    """
    for x in inputs:
        x.grad = None
    out = f()
    out.backward(np.ones_like(out.data))
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
        flat = x.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        num = np.zeros(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data.sum())
            flat[i] = orig - h
            fm = float(f().data.sum())
            flat[i] = orig
            num[k] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], num))
    return worst
