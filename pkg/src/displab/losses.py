"""Dispersion-style regularizers, the distillation loss, and the combined objective.

Four interchangeable formulations push token embeddings apart:

* ``dispersion`` - log-mean-exp of negative angular distances over all
  ordered off-diagonal pairs (the canonical form, computed by the fused
  kernel with an analytic gradient),
* ``decorrelation`` - squared off-diagonal entries of the standardized
  feature covariance,
* ``l2_repel`` - log-mean-exp of negative squared Euclidean distances
  plus a norm penalty that blocks the escape-by-growing degeneracy,
* ``orthogonalization`` - squared hinge on angular distance with the
  margin fixed at 1/2 (orthogonality), so obtuse pairs are free.

All four accept ``(N, d)`` or batched ``(B, N, d)`` input; batched input
is averaged over the leading axis. Values are graph nodes, so gradients
come from ``ndcore.backward``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, ndcore
from .ndcore import Tensor, logsumexp, make_node, register_primitive, softmax

__all__ = [
    "LossConfig",
    "LossResult",
    "LOSS_KINDS",
    "angular_distance",
    "dispersion_loss",
    "decorrelation_loss",
    "l2_repel_loss",
    "orthogonalization_loss",
    "kd_loss",
    "regularizer",
    "combined_objective",
    "pair_count_log",
]

LOSS_KINDS = ("dispersion", "decorrelation", "l2_repel", "orthogonalization")

DEFAULT_TAU = 1.0
DEFAULT_LAMBDA_DISP = 0.1
DEFAULT_LAMBDA_NORM = 1e-4
DEFAULT_CLAMP_EPS = 1e-6
DECORRELATION_STD_EPS = 1e-8
_MASK_NEG = -1e9


@dataclass
class LossConfig:
    kind: str = "dispersion"
    tau: float = DEFAULT_TAU
    lambda_disp: float = DEFAULT_LAMBDA_DISP
    lambda_norm: float = DEFAULT_LAMBDA_NORM
    clamp_eps: float = DEFAULT_CLAMP_EPS
    layer_aggregation: str = "mean"
    # Divisor of the standardized covariance: "dim" (d-1) or "rows" (N-1).
    decorrelation_divisor: str = "dim"

    def validate(self) -> "LossConfig":
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.lambda_disp < 0 or self.lambda_norm < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 < self.clamp_eps <= 1e-3:
            raise ValueError("clamp_eps must lie in (0, 1e-3]")
        if self.layer_aggregation not in ("mean", "sum"):
            raise ValueError("layer_aggregation must be 'mean' or 'sum'")
        if self.decorrelation_divisor not in ("dim", "rows"):
            raise ValueError("decorrelation_divisor must be 'dim' or 'rows'")
        return self


@dataclass
class LossResult:
    """Aggregated regularizer value plus its per-layer terms (graph nodes)."""
    value: Tensor
    per_layer: list


def pair_count_log(n: int) -> float:
    """log(N(N-1)), the additive constant between the log-sum and log-mean forms."""
    return math.log(n * (n - 1))


def angular_distance(c, clamp_eps: float = DEFAULT_CLAMP_EPS):
    """Map cosine similarity to arccos(c)/pi in [0, 1].

    Total on [-1, 1]: inputs are clamped into [-1+eps, 1-eps] first, which
    also bounds the gradient near the endpoints.
    """
    c = np.asarray(c, dtype=np.float64)
    return np.arccos(np.clip(c, -1.0 + clamp_eps, 1.0 - clamp_eps)) / math.pi


# ---------------------------------------------------------------------
# Fused dispersion kernel as a single graph primitive
# ---------------------------------------------------------------------

def _prim_dispersion_pairs(z: Tensor, tau: float, eps: float) -> Tensor:
    loss, cache = _kernels.dispersion_forward(z.data, tau, eps)

    def vjp(g):
        return (_kernels.dispersion_backward(cache, g),)

    return make_node("dispersion_pairs", loss, (z,), vjp)


register_primitive("dispersion_pairs", _prim_dispersion_pairs)


# ---------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------

def _lift_batched(z, op: str) -> tuple[Tensor, int, int]:
    """Normalize input to a (B, N, d) tensor; returns (tensor, N, d)."""
    if not isinstance(z, Tensor):
        z = Tensor(np.asarray(z))
    if z.ndim == 2:
        n, d = z.shape
        z = z.reshape((1, n, d))
    elif z.ndim == 3:
        _, n, d = z.shape
    else:
        raise ValueError(f"{op}: expected (N, d) or (B, N, d), got {z.shape}")
    return z, n, d


def _const(arr, dtype) -> Tensor:
    return Tensor(np.asarray(arr, dtype=dtype))


def _offdiag_mask(n: int, dtype) -> Tensor:
    return _const(1.0 - np.eye(n), dtype)


def _replicate_rows(col: Tensor, width: int, dtype) -> Tensor:
    # (B, N, 1) @ (1, width) -> (B, N, width); the engine's batched matmul
    # stands in for the interior broadcasting it deliberately lacks.
    return col @ _const(np.ones((1, width)), dtype)


# ---------------------------------------------------------------------
# The four dispersion-family losses
# ---------------------------------------------------------------------

def dispersion_loss(z, tau: float = DEFAULT_TAU,
                    clamp_eps: float = DEFAULT_CLAMP_EPS) -> Tensor:
    """Log-mean-exp of -angular_distance/tau over ordered pairs i != j.

    Equals the log-sum form minus log(N(N-1)); gradients are identical.
    Rows are normalized internally with the same eps guarding both the
    norm denominator and the arccos clamp.
    """
    z, n, _ = _lift_batched(z, "dispersion_loss")
    if n < 2:
        raise ValueError("dispersion_loss: need at least 2 rows")
    per_seq = ndcore.evaluate_primitive("dispersion_pairs", z, tau=tau, eps=clamp_eps)
    return per_seq.mean()


def decorrelation_loss(z, divisor: str = "dim",
                       std_eps: float = DECORRELATION_STD_EPS) -> Tensor:
    """Sum of squared off-diagonal standardized-covariance entries.

    Columns are standardized with the population std (eps-guarded), and
    the Gram of the standardized matrix is divided by d-1 (``divisor="dim"``,
    the literal formulation) or N-1 (``divisor="rows"``).
    """
    z, n, d = _lift_batched(z, "decorrelation_loss")
    if n < 2:
        raise ValueError("decorrelation_loss: need at least 2 rows")
    if d < 2:
        raise ValueError("decorrelation_loss: need at least 2 feature dimensions")
    if divisor == "dim":
        div = float(d - 1)
    elif divisor == "rows":
        div = float(n - 1)
    else:
        raise ValueError(f"unknown decorrelation divisor {divisor!r}")
    dtype = z.dtype
    b = z.shape[0]
    ones_col = _const(np.ones((b, n, 1)), dtype)
    mu = z.mean(axis=1, keepdims=True)              # (B, 1, d)
    centered = z - ones_col @ mu                    # replicate mean over rows
    sigma = centered.square().mean(axis=1, keepdims=True).sqrt()
    scale = ones_col @ (sigma + std_eps)
    zc = centered / scale
    cov = zc.transpose((0, 2, 1)) @ zc / div        # (B, d, d)
    off = cov.square() * _offdiag_mask(d, dtype)
    return off.sum() / float(b)


def l2_repel_loss(z, tau: float = DEFAULT_TAU,
                  lambda_norm: float = DEFAULT_LAMBDA_NORM) -> Tensor:
    """Log-mean-exp of -squared-distance/tau plus lambda_norm * ||Z||^2."""
    z, n, _ = _lift_batched(z, "l2_repel_loss")
    if n < 2:
        raise ValueError("l2_repel_loss: need at least 2 rows")
    dtype = z.dtype
    b = z.shape[0]
    gram = z @ z.transpose((0, 2, 1))
    sq = z.square().sum(axis=2, keepdims=True)      # (B, N, 1)
    row = _replicate_rows(sq, n, dtype)
    dist = row + row.transpose((0, 2, 1)) - 2.0 * gram
    logits = dist * (-1.0 / tau) + _const(_MASK_NEG * np.eye(n), dtype)
    lse = logsumexp(logits.reshape((b, n * n)), axis=1) - pair_count_log(n)
    value = lse.mean()
    if lambda_norm != 0.0:
        value = value + lambda_norm * (sq.sum() / float(b))
    return value


def orthogonalization_loss(z, clamp_eps: float = DEFAULT_CLAMP_EPS) -> Tensor:
    """Mean over ordered pairs i != j of max(0, 1/2 - angular_distance)^2."""
    z, n, d = _lift_batched(z, "orthogonalization_loss")
    if n < 2:
        raise ValueError("orthogonalization_loss: need at least 2 rows")
    dtype = z.dtype
    b = z.shape[0]
    norms = z.square().sum(axis=2, keepdims=True).sqrt()
    inv = 1.0 / (norms + clamp_eps)
    zn = z * _replicate_rows(inv, d, dtype)
    cos = (zn @ zn.transpose((0, 2, 1))).clamp(-1.0 + clamp_eps, 1.0 - clamp_eps)
    dist = cos.arccos() / math.pi
    hinge = (0.5 - dist).maximum(0.0)
    off = hinge.square() * _offdiag_mask(n, dtype)
    return off.sum() / float(n * (n - 1)) / float(b)


_LOSS_BY_KIND = {
    "dispersion": lambda z, cfg: dispersion_loss(z, cfg.tau, cfg.clamp_eps),
    "decorrelation": lambda z, cfg: decorrelation_loss(z, cfg.decorrelation_divisor),
    "l2_repel": lambda z, cfg: l2_repel_loss(z, cfg.tau, cfg.lambda_norm),
    "orthogonalization": lambda z, cfg: orthogonalization_loss(z, cfg.clamp_eps),
}


# ---------------------------------------------------------------------
# Distillation loss
# ---------------------------------------------------------------------

def kd_loss(teacher_logits, student_logits, tau: float = 1.0) -> Tensor:
    """Temperature-scaled soft cross-entropy between logit vectors.

    -tau^2 * sum_a softmax(teacher/tau)_a * log softmax(student/tau)_a.
    Minimized (at tau^2 * teacher entropy) exactly when the softened
    distributions coincide.
    """
    if tau <= 0:
        raise ValueError("kd_loss: tau must be positive")
    t = teacher_logits if isinstance(teacher_logits, Tensor) else Tensor(np.asarray(teacher_logits))
    s = student_logits if isinstance(student_logits, Tensor) else Tensor(np.asarray(student_logits))
    if t.ndim != 1 or s.ndim != 1 or t.shape != s.shape:
        raise ValueError(f"kd_loss: expected matching logit vectors, got {t.shape} and {s.shape}")
    if t.shape[0] < 2:
        raise ValueError("kd_loss: need a vocabulary of at least 2")
    soft_teacher = softmax(t * (1.0 / tau), axis=-1)
    scaled_student = s * (1.0 / tau)
    log_probs = scaled_student - logsumexp(scaled_student)
    return (soft_teacher * log_probs).sum() * (-tau * tau)


# ---------------------------------------------------------------------
# Combined training objective
# ---------------------------------------------------------------------

def regularizer(layer_embeddings, cfg: LossConfig) -> LossResult:
    """Per-layer dispersion-family terms and their configured aggregate."""
    cfg.validate()
    if not layer_embeddings:
        raise ValueError("regularizer: empty layer list")
    fn = _LOSS_BY_KIND[cfg.kind]
    per_layer = [fn(z, cfg) for z in layer_embeddings]
    total = per_layer[0]
    for term in per_layer[1:]:
        total = total + term
    if cfg.layer_aggregation == "mean":
        total = total / float(len(per_layer))
    return LossResult(value=total, per_layer=per_layer)


def combined_objective(train_loss: Tensor, layer_embeddings, cfg: LossConfig) -> Tensor:
    """train_loss + lambda_disp * aggregated regularizer.

    With lambda_disp == 0 the training loss is returned unchanged (the
    same node, so the value is bit-identical and no pair work happens).
    """
    cfg.validate()
    if cfg.lambda_disp == 0.0:
        return train_loss
    if not layer_embeddings:
        raise ValueError("combined_objective: lambda_disp > 0 but no layer embeddings")
    reg = regularizer(layer_embeddings, cfg)
    return train_loss + cfg.lambda_disp * reg.value
