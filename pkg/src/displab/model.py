"""Desk-scale decoder-only transformer with per-layer embedding capture.

GPT-2 lineage: byte-level vocabulary, learned absolute positions,
pre-norm blocks (attention then MLP, both residual), a final layer norm,
and an output head tied to the token embedding. Every forward pass can
hand back the embedding trace the geometry metrics consume: the
token+position sum (layer 0), each block's post-residual output
(layers 1..L), and the post-final-norm matrix as a flagged extra entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ndcore
from .geometry import EmbeddingTrace
from .ndcore import Tensor, gather, gelu, layer_norm, softmax, take_last_axis

__all__ = [
    "ModelConfig",
    "Params",
    "init_params",
    "forward",
    "forward_with_trace",
    "cross_entropy",
    "PARAM_INIT_STD",
]

BYTE_VOCAB = 257  # 256 byte values + padding id
PARAM_INIT_STD = 0.02


@dataclass
class ModelConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = BYTE_VOCAB
    context_len: int = 128

    def validate(self) -> "ModelConfig":
        if self.n_layers < 1:
            raise ValueError("need at least one layer")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.context_len < 2:
            raise ValueError("context_len must be at least 2")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


class Params:
    """Named parameter tensors in declaration order."""

    def __init__(self, cfg: ModelConfig, tensors: dict):
        self.cfg = cfg
        self._tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def named(self):
        return list(self._tensors.items())

    def tensors(self):
        return list(self._tensors.values())

    @property
    def dtype(self):
        return self._tensors["wte"].dtype

    def param_count(self) -> int:
        return sum(t.size for t in self._tensors.values())


def _block_names(i: int):
    base = f"block{i}."
    return [base + n for n in (
        "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
        "ln2_g", "ln2_b", "w_fc", "b_fc", "w_proj", "b_proj",
    )]


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> Params:
    """Deterministic initialization from the seed.

    Affine weights ~ N(0, 0.02^2), biases 0, norm gains 1; the residual
    output projections (attention out, MLP down) are further scaled by
    1/sqrt(2 L) so depth does not inflate the residual stream.
    """
    cfg.validate()
    rng = np.random.Generator(np.random.PCG64(seed))
    d, dff, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    resid_scale = 1.0 / math.sqrt(2.0 * cfg.n_layers)

    def normal(*shape, scale=1.0):
        w = rng.normal(0.0, PARAM_INIT_STD, size=shape) * scale
        return Tensor(w.astype(dtype), requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    tensors = {"wte": normal(v, d), "wpe": normal(cfg.context_len, d)}
    for i in range(cfg.n_layers):
        b = f"block{i}."
        tensors[b + "ln1_g"] = ones(d)
        tensors[b + "ln1_b"] = zeros(d)
        tensors[b + "wq"] = normal(d, d)
        tensors[b + "bq"] = zeros(d)
        tensors[b + "wk"] = normal(d, d)
        tensors[b + "bk"] = zeros(d)
        tensors[b + "wv"] = normal(d, d)
        tensors[b + "bv"] = zeros(d)
        tensors[b + "wo"] = normal(d, d, scale=resid_scale)
        tensors[b + "bo"] = zeros(d)
        tensors[b + "ln2_g"] = ones(d)
        tensors[b + "ln2_b"] = zeros(d)
        tensors[b + "w_fc"] = normal(d, dff)
        tensors[b + "b_fc"] = zeros(dff)
        tensors[b + "w_proj"] = normal(dff, d, scale=resid_scale)
        tensors[b + "b_proj"] = zeros(d)
    tensors["ln_f_g"] = ones(d)
    tensors["ln_f_b"] = zeros(d)
    return Params(cfg, tensors)


def _causal_mask(n: int, dtype) -> Tensor:
    # Additive mask; -1e9 underflows to exactly zero attention weight after
    # the softmax shift, which is what makes the causality test bit-exact.
    m = np.triu(np.full((n, n), -1e9, dtype=dtype), k=1)
    return Tensor(m)


def forward(params: Params, tokens: np.ndarray):
    """Batched forward pass.

    ``tokens`` is an int array of shape (B, N) with N <= context_len.
    Returns ``(logits, block_layers, final_norm)`` where ``logits`` is a
    (B, N, V) tensor, ``block_layers`` the list of live (B, N, d) layer
    tensors [x_0, x_1, ..., x_L], and ``final_norm`` the post-final-norm
    tensor.
    """
    cfg = params.cfg
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"expected (B, N) token ids, got shape {tokens.shape}")
    b, n = tokens.shape
    if n < 1 or n > cfg.context_len:
        raise ValueError(f"sequence length {n} outside 1..{cfg.context_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")
    dtype = params.dtype
    h, dh = cfg.n_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)
    mask = _causal_mask(n, dtype)

    x = gather(params["wte"], tokens) + gather(params["wpe"], np.arange(n))
    layers = [x]
    for i in range(cfg.n_layers):
        p = f"block{i}."
        ln1 = layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        q = (ln1 @ params[p + "wq"] + params[p + "bq"]).reshape((b, n, h, dh)).transpose((0, 2, 1, 3))
        k = (ln1 @ params[p + "wk"] + params[p + "bk"]).reshape((b, n, h, dh)).transpose((0, 2, 1, 3))
        v = (ln1 @ params[p + "wv"] + params[p + "bv"]).reshape((b, n, h, dh)).transpose((0, 2, 1, 3))
        scores = (q @ k.transpose((0, 1, 3, 2))) * scale + mask
        att = softmax(scores, axis=-1)
        ctx = (att @ v).transpose((0, 2, 1, 3)).reshape((b, n, cfg.d_model))
        x = x + ctx @ params[p + "wo"] + params[p + "bo"]
        ln2 = layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        x = x + gelu(ln2 @ params[p + "w_fc"] + params[p + "b_fc"]) @ params[p + "w_proj"] + params[p + "b_proj"]
        layers.append(x)
    final = layer_norm(x, params["ln_f_g"], params["ln_f_b"])
    logits = final @ params["wte"].transpose()
    return logits, layers, final


def forward_with_trace(params: Params, tokens, sequence_id: str = ""):
    """Single-sequence forward returning (logits (N, V) tensor, EmbeddingTrace).

    The trace holds detached copies: layer 0 is the embedding sum, layers
    1..L the post-residual block outputs, and the post-final-norm matrix
    rides along as the flagged extra entry.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim != 1:
        raise ValueError(f"expected a 1-D id sequence, got shape {tokens.shape}")
    logits, layers, final = forward(params, tokens[None, :])
    n = tokens.shape[0]
    trace = EmbeddingTrace(
        layers=[t.data[0].copy() for t in layers],
        sequence_id=sequence_id,
        final_norm=final.data[0].copy(),
    )
    return logits.reshape((n, params.cfg.vocab_size)), trace


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean next-token cross entropy; targets aligned with logit positions."""
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets {targets.shape} do not match logits {logits.shape}")
    lse = ndcore.logsumexp(logits, axis=-1)
    picked = take_last_axis(logits, targets)
    return (lse - picked).mean()
