"""Condensation diagnostics over per-layer embedding traces.

A trace holds the N x d token-embedding matrices a forward pass produced
for one input sequence: index 0 is the token+position embedding output,
indices 1..L the post-residual block outputs, and an optional flagged
entry the post-final-norm output. The diagnostics are the full pairwise
cosine matrix, its per-layer mean mu, per-layer histograms over [-1, 1],
and rank correlations of mu against depth.

Metrics include the i == j pairs, so N^2 ordered pairs enter every mean
and histogram (the training losses exclude the diagonal instead; the two
conventions differ in value, not gradient).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .ranks import kendall_tau, spearman_rho

__all__ = [
    "EmbeddingTrace",
    "HistogramStack",
    "CondensationSummary",
    "cosine_matrix",
    "layer_mean_similarity",
    "histogram_stack",
    "average_histograms",
    "condensation_summary",
    "DEFAULT_BINS",
    "COSINE_NORM_EPS",
]

DEFAULT_BINS = 101
COSINE_NORM_EPS = 1e-12


@dataclass
class EmbeddingTrace:
    """Per-layer N x d embedding matrices for one input sequence."""

    layers: list  # [embedding output, block 1, ..., block L]
    sequence_id: str = ""
    final_norm: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.layers) < 2:
            raise ValueError("trace needs the embedding output plus at least one block output")
        self.layers = [np.asarray(m) for m in self.layers]
        shape = self.layers[0].shape
        if len(shape) != 2:
            raise ValueError(f"trace layers must be 2-D, got {shape}")
        for m in self.layers:
            if m.shape != shape:
                raise ValueError(f"inconsistent layer shapes {m.shape} vs {shape}")
        if self.final_norm is not None:
            self.final_norm = np.asarray(self.final_norm)
            if self.final_norm.shape != shape:
                raise ValueError("final-norm entry shape mismatch")

    @property
    def token_count(self) -> int:
        return self.layers[0].shape[0]

    @property
    def dim(self) -> int:
        return self.layers[0].shape[1]

    @property
    def depth(self) -> int:
        """Number of block outputs L (layer 0 not counted)."""
        return len(self.layers) - 1

    def matrices(self) -> list:
        out = list(self.layers)
        if self.final_norm is not None:
            out.append(self.final_norm)
        return out

    def labels(self) -> list:
        out = [str(i) for i in range(len(self.layers))]
        if self.final_norm is not None:
            out.append("final_norm")
        return out


@dataclass
class HistogramStack:
    """Per-layer normalized histograms of cosine similarities over [-1, 1]."""

    edges: np.ndarray           # bins+1 edges
    freqs: np.ndarray           # (n_layers, bins), rows sum to 1
    labels: list = field(default_factory=list)


@dataclass
class CondensationSummary:
    mu: np.ndarray              # mean cosine per block output, l = 1..L
    spearman_rho: float
    kendall_tau: float
    n_sequences: int
    mu_embedding: float         # layer 0, excluded from the correlations
    mu_final_norm: Optional[float] = None


def cosine_matrix(z, eps: float = COSINE_NORM_EPS) -> np.ndarray:
    """All-pairs cosine similarities of the rows of an N x d matrix.

    Row norms are eps-guarded, entries clipped into [-1, 1]. Computed in
    float64 regardless of input precision.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValueError(f"expected an N x d matrix, got shape {z.shape}")
    if z.shape[1] == 0:
        raise ValueError("embedding dimension is zero")
    return np.clip(_kernels.pairwise_cosine(z, eps), -1.0, 1.0)


def layer_mean_similarity(trace: EmbeddingTrace, eps: float = COSINE_NORM_EPS) -> np.ndarray:
    """mu per stored matrix: the mean over all N^2 ordered pairs, diagonal included."""
    if trace.token_count < 2:
        raise ValueError("mean similarity needs at least 2 tokens")
    return np.array([cosine_matrix(m, eps).mean() for m in trace.matrices()])


def histogram_stack(trace: EmbeddingTrace, bins: int = DEFAULT_BINS,
                    eps: float = COSINE_NORM_EPS) -> HistogramStack:
    """Histogram the N^2 similarity values of every stored matrix over [-1, 1].

    Frequencies are normalized by N^2; the value 1 falls in the last bin.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    edges = np.linspace(-1.0, 1.0, bins + 1)
    rows = []
    for m in trace.matrices():
        c = cosine_matrix(m, eps)
        counts, _ = np.histogram(c.ravel(), bins=edges)
        rows.append(counts / c.size)
    return HistogramStack(edges=edges, freqs=np.array(rows), labels=trace.labels())


def _running_mean(arrays) -> np.ndarray:
    """Streaming mean; repeated identical inputs reproduce the input exactly."""
    mean = None
    for i, arr in enumerate(arrays, start=1):
        arr = np.asarray(arr, dtype=np.float64)
        if mean is None:
            mean = arr.copy()
        else:
            mean += (arr - mean) / i
    return mean


def _sorted_consistent(traces) -> list:
    traces = sorted(traces, key=lambda t: t.sequence_id)
    if not traces:
        raise ValueError("need at least one trace")
    first = traces[0]
    for t in traces[1:]:
        if t.depth != first.depth or (t.final_norm is None) != (first.final_norm is None):
            raise ValueError(
                f"inconsistent trace structure: {t.sequence_id!r} has depth {t.depth}, "
                f"expected {first.depth}")
    return traces


def average_histograms(traces, bins: int = DEFAULT_BINS,
                       eps: float = COSINE_NORM_EPS) -> HistogramStack:
    """Population-averaged histogram stack over several traces."""
    traces = _sorted_consistent(traces)
    stacks = (histogram_stack(t, bins, eps) for t in traces)
    first = None
    freq_iter = []
    for s in stacks:
        if first is None:
            first = s
        freq_iter.append(s.freqs)
    return HistogramStack(edges=first.edges, freqs=_running_mean(freq_iter),
                          labels=first.labels)


def condensation_summary(traces, eps: float = COSINE_NORM_EPS) -> CondensationSummary:
    """Average mu over sequences, then correlate block-output mu with depth.

    Layer 0 (and the post-final-norm entry, when present) is reported
    separately and excluded from the rank correlations, which run over
    l = 1..L against the layer indices.
    """
    traces = _sorted_consistent(traces)
    per_trace = [layer_mean_similarity(t, eps) for t in traces]
    mu_all = _running_mean(per_trace)
    depth = traces[0].depth
    mu_blocks = mu_all[1:1 + depth]
    layer_index = np.arange(1, depth + 1, dtype=np.float64)
    rho = spearman_rho(layer_index, mu_blocks)
    tau = kendall_tau(layer_index, mu_blocks)
    mu_fn = float(mu_all[-1]) if traces[0].final_norm is not None else None
    return CondensationSummary(
        mu=mu_blocks,
        spearman_rho=rho,
        kendall_tau=tau,
        n_sequences=len(traces),
        mu_embedding=float(mu_all[0]),
        mu_final_norm=mu_fn,
    )
