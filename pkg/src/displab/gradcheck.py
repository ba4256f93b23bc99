"""Central finite-difference gradients, the oracle for every backward pass."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .ndcore import DomainError

__all__ = ["finite_difference_gradient", "max_relative_error"]


def finite_difference_gradient(f: Callable[[np.ndarray], float],
                               x: np.ndarray,
                               h: float = 1e-6) -> np.ndarray:
    """Per-coordinate central difference (f(x+h e_k) - f(x-h e_k)) / (2h).

    ``f`` must return a finite scalar at every probe point; a non-finite
    value raises :class:`DomainError` naming the offending coordinate.
    Intended for float64 inputs; float32 callers should widen h.
    """
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = grad.reshape(-1)
    for k in range(x.size):
        xp = x.copy()
        xp.flat[k] += h
        fp = float(f(xp))
        xm = x.copy()
        xm.flat[k] -= h
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError(f"finite_difference_gradient: non-finite value at coordinate {k}")
        flat[k] = (fp - fm) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray,
                       atol: float = 1e-10) -> float:
    """Worst-case |a - n| / max(|a|, |n|) with an absolute floor for zeros."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    err = np.where(diff <= atol, 0.0, diff / scale)
    return float(err.max()) if err.size else 0.0
