"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x.data`` in place."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    gf = g.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = float(f().data)
            flat[i] = old - h
            fm = float(f().data)
            flat[i] = old
            gf[i] = (fp - fm) / (2 * h)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two gradient magnitudes (floor 1e-8)."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error over ``inputs`` between backward() and finite differences.

    ``f`` must rebuild its graph on every call and return a scalar. Run under
    64-bit precision.
    """
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    out = f()
    out.backward()
    worst = 0.0
    for x in inputs:
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad.astype(np.float64)
        worst = max(worst, relative_error(analytic, numeric_grad(f, x, h)))
    return worst


def readout(y: Tensor, seed: int = 0) -> Tensor:
    """Scalar ``sum(y * r)`` with fixed random ``r``, to avoid symmetric cancellation."""
    r = np.random.default_rng(seed).standard_normal(y.shape)
    return T.tsum(y * Tensor(r, dtype=y.data.dtype))
