"""Spearman and Kendall rank correlations with average-rank tie handling."""

from __future__ import annotations

import numpy as np

__all__ = ["UndefinedCorrelationError", "average_ranks", "spearman_rho", "kendall_tau"]


class UndefinedCorrelationError(ValueError):
    """Raised when a correlation is undefined (constant input series)."""


def _validate_pair(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError(f"expected equal-length 1-D series, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 observations")
    for name, v in (("x", x), ("y", y)):
        if np.all(v == v[0]):
            raise UndefinedCorrelationError(f"undefined correlation: {name} is constant")
    return x, y


def average_ranks(v) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(x, y) -> float:
    """Pearson correlation of the average-rank vectors."""
    x, y = _validate_pair(x, y)
    rx = average_ranks(x)
    ry = average_ranks(y)
    rxc = rx - rx.mean()
    ryc = ry - ry.mean()
    denom = np.sqrt((rxc * rxc).sum() * (ryc * ryc).sum())
    if denom == 0.0:
        raise UndefinedCorrelationError("undefined correlation: degenerate ranks")
    return float((rxc * ryc).sum() / denom)


def kendall_tau(x, y) -> float:
    """Tie-corrected Kendall correlation (the tau-b variant)."""
    x, y = _validate_pair(x, y)
    n = x.size
    dx = np.sign(x[:, None] - x[None, :])
    dy = np.sign(y[:, None] - y[None, :])
    iu = np.triu_indices(n, k=1)
    concordance = float((dx[iu] * dy[iu]).sum())  # n_concordant - n_discordant
    n0 = n * (n - 1) / 2.0
    tie_x = _tie_correction(x)
    tie_y = _tie_correction(y)
    denom = np.sqrt((n0 - tie_x) * (n0 - tie_y))
    if denom == 0.0:
        raise UndefinedCorrelationError("undefined correlation: all pairs tied")
    return float(concordance / denom)


def _tie_correction(v) -> float:
    _, counts = np.unique(v, return_counts=True)
    return float((counts * (counts - 1)).sum() / 2.0)
