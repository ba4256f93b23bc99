"""Vectorized NumPy implementation of the pairwise-similarity hot kernels.

This is the fallback backend; the Cython extension implements the same
functions with fused loops. Both must agree to float rounding.
"""

from __future__ import annotations

import math

import numpy as np


def pairwise_cosine(z: np.ndarray, eps: float) -> np.ndarray:
    """Row-normalized Gram matrix, ``(..., N, d) -> (..., N, N)``.

    Row norms are guarded by ``eps`` in the denominator, so zero rows
    yield zero similarity instead of NaN.
    """
    z = np.asarray(z)
    norms = np.sqrt((z * z).sum(axis=-1, keepdims=True))
    zn = z / (norms + eps)
    return zn @ np.swapaxes(zn, -1, -2)


def dispersion_forward(z: np.ndarray, tau: float, eps: float):
    """Per-sequence dispersion loss over all ordered off-diagonal pairs.

    ``z`` is ``(B, N, d)``. Returns ``(loss, cache)`` where ``loss`` is
    ``(B,)``: logsumexp of -angular_distance/tau over the N(N-1) pairs,
    shifted by -log(N(N-1)) so it is a log-mean-exp. ``eps`` guards the
    row norms and clamps cosines into ``[-1+eps, 1-eps]`` before arccos.
    """
    z = np.asarray(z)
    b, n, _ = z.shape
    norms = np.sqrt((z * z).sum(axis=-1, keepdims=True))
    zn = z / (norms + eps)
    c_raw = zn @ np.swapaxes(zn, -1, -2)
    c = np.clip(c_raw, -1.0 + eps, 1.0 - eps)
    logits = np.arccos(c) / (-math.pi * tau)
    diag = np.eye(n, dtype=bool)
    logits[:, diag] = -np.inf
    m = logits.max(axis=(1, 2))
    e = np.exp(logits - m[:, None, None])
    s = e.sum(axis=(1, 2))
    loss = m + np.log(s) - math.log(n * (n - 1))
    pair_softmax = e / s[:, None, None]
    cache = (zn, norms, c_raw, c, pair_softmax, tau, eps)
    return loss.astype(z.dtype, copy=False), cache


def dispersion_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of :func:`dispersion_forward` w.r.t. ``z``."""
    zn, norms, c_raw, c, pair_softmax, tau, eps = cache
    g = np.asarray(grad_out).reshape(-1, 1, 1)
    # d(loss)/d(cosine): softmax weight through -arccos/(pi tau), zero at
    # diagonal (softmax is 0 there) and at clamped entries.
    passed = (c_raw >= -1.0 + eps) & (c_raw <= 1.0 - eps)
    dc = g * pair_softmax / (math.pi * tau * np.sqrt(1.0 - c * c))
    dc = np.where(passed, dc, 0.0)
    dzn = (dc + np.swapaxes(dc, -1, -2)) @ zn
    # Through zn = z / (|z| + eps): dz = dzn/(r+eps) - zn (zn . dzn)/r.
    r_safe = np.where(norms == 0.0, 1.0, norms)
    inner = (dzn * zn).sum(axis=-1, keepdims=True)
    dz = dzn / (norms + eps) - zn * (inner / r_safe)
    return dz.astype(zn.dtype, copy=False)
