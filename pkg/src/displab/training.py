"""Training loop: AdamW with decoupled weight decay, warmup schedules,
the combined objective, periodic condensation snapshots, and binary
checkpoints.

Runs are deterministic given (seed, config) on a single-threaded math
path: the batch stream, initialization, and snapshot sequences are all
derived from the seed, and the metric log reproduces bit-identically.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import jsonio
from .geometry import condensation_summary
from .losses import LossConfig, regularizer
from .model import ModelConfig, Params, cross_entropy, forward, forward_with_trace, init_params
from .ndcore import Tensor, backward, zero_grads
from .ranks import UndefinedCorrelationError

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "TrainingDivergedError",
    "CorpusTooSmallError",
    "learning_rate_at",
    "train_step",
    "run_training",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"CKPT"
CHECKPOINT_VERSION = 1

SCHEDULES = ("cosine", "linear", "constant")


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, metrics: dict):
        self.step = step
        self.metrics = metrics
        super().__init__(f"non-finite loss at step {step}: {metrics}")


class CorpusTooSmallError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    steps: int = 2000
    batch_size: int = 16
    lr: float = 3e-4
    schedule: str = "cosine"
    warmup_steps: int = 200
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.95
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)

    def validate(self) -> "TrainConfig":
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.warmup_steps < 0 or self.weight_decay < 0:
            raise ValueError("warmup_steps and weight_decay must be non-negative")
        self.loss.validate()
        return self


def learning_rate_at(cfg: TrainConfig, step: int) -> float:
    """LR for the given 0-based step: linear warmup, then the decay schedule."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    if cfg.schedule == "constant":
        return cfg.lr
    span = max(1, cfg.steps - cfg.warmup_steps)
    progress = min(1.0, (step - cfg.warmup_steps) / span)
    if cfg.schedule == "linear":
        return cfg.lr * (1.0 - progress)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adaptive moments with decoupled weight decay.

    Decay applies to matrix-shaped parameters only (embeddings and
    projections); biases and norm gains are exempt.
    """

    def __init__(self, params: Params, cfg: TrainConfig):
        self.cfg = cfg
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.named()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.named()}

    def step(self, params: Params, lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in params.named():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
            if cfg.weight_decay > 0.0 and p.data.ndim >= 2:
                update = update + cfg.weight_decay * p.data
            p.data -= lr * update


def _grad_norm(params: Params) -> float:
    total = 0.0
    for _, p in params.named():
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float((g * g).sum())
    return math.sqrt(total)


def train_step(params: Params, opt: AdamW, inputs: np.ndarray, targets: np.ndarray,
               cfg: TrainConfig, step: int) -> dict:
    """One optimizer step on the combined objective; returns step metrics."""
    if inputs.shape[1] < 2:
        raise ValueError("batch sequences must have length >= 2")
    logits, layers, _ = forward(params, inputs)
    ce = cross_entropy(logits, targets)
    lam = cfg.loss.lambda_disp
    if lam > 0.0:
        reg = regularizer(layers[1:], cfg.loss)  # block outputs only
        disp = reg.value.item()
        total = ce + lam * reg.value
    else:
        disp = 0.0
        total = ce
    metrics = {
        "step": step,
        "ce": ce.item(),
        "disp": disp,
        "total": total.item(),
        "lr": learning_rate_at(cfg, step),
    }
    if not all(math.isfinite(v) for v in (metrics["ce"], metrics["disp"], metrics["total"])):
        raise TrainingDivergedError(step, metrics)
    zero_grads(params.tensors())
    backward(total)
    metrics["grad_norm"] = _grad_norm(params)
    opt.step(params, metrics["lr"])
    return metrics


def _snapshot(params: Params, trace_sequences, step: int) -> dict:
    traces = [forward_with_trace(params, seq, sequence_id=f"trace{i:04d}")[1]
              for i, seq in enumerate(trace_sequences)]
    record = {"step": step}
    try:
        summary = condensation_summary(traces)
        record.update({
            "mu": [float(v) for v in summary.mu],
            "spearman_rho": summary.spearman_rho,
            "kendall_tau": summary.kendall_tau,
            "mu_embedding": summary.mu_embedding,
            "mu_final_norm": summary.mu_final_norm,
            "n_sequences": summary.n_sequences,
        })
    except UndefinedCorrelationError:
        # constant mu across depth: report values, leave correlations null
        from .geometry import layer_mean_similarity
        mus = [layer_mean_similarity(t) for t in traces]
        mu = np.mean(mus, axis=0)
        record.update({
            "mu": [float(v) for v in mu[1:len(traces[0].layers)]],
            "spearman_rho": None,
            "kendall_tau": None,
            "mu_embedding": float(mu[0]),
            "mu_final_norm": float(mu[-1]) if traces[0].final_norm is not None else None,
            "n_sequences": len(traces),
        })
    return record


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    train_cfg: TrainConfig
    params: Params
    opt_m: dict
    opt_v: dict
    opt_t: int
    step: int
    metric_log: list
    snapshots: list


def run_training(model_cfg: ModelConfig, train_cfg: TrainConfig, tokens: np.ndarray,
                 trace_sequences=None, snapshot_every: int | None = None,
                 dtype=np.float32) -> Checkpoint:
    """Train from scratch on a token stream.

    ``tokens`` is a 1-D id array; each step samples ``batch_size`` random
    windows of ``context_len + 1`` ids (inputs/targets shifted by one).
    ``trace_sequences`` are held-out id sequences snapshotted at step 0,
    every ``snapshot_every`` steps, and after the final step.
    """
    model_cfg.validate()
    train_cfg.validate()
    tokens = np.asarray(tokens)
    window = model_cfg.context_len + 1
    if tokens.size < max(window, train_cfg.batch_size * model_cfg.context_len):
        raise CorpusTooSmallError(
            f"corpus too small: {tokens.size} tokens < "
            f"{max(window, train_cfg.batch_size * model_cfg.context_len)} required")

    params = init_params(model_cfg, train_cfg.seed, dtype=dtype)
    opt = AdamW(params, train_cfg)
    batch_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([train_cfg.seed, 1])))

    trace_sequences = trace_sequences if trace_sequences is not None else []
    snapshots = []
    if trace_sequences:
        snapshots.append(_snapshot(params, trace_sequences, step=0))

    metric_log = []
    max_start = tokens.size - window
    for step in range(train_cfg.steps):
        starts = batch_rng.integers(0, max_start + 1, size=train_cfg.batch_size)
        windows = np.stack([tokens[s:s + window] for s in starts]).astype(np.int64)
        metrics = train_step(params, opt, windows[:, :-1], windows[:, 1:], train_cfg, step)
        metric_log.append(metrics)
        done = step + 1
        if trace_sequences and snapshot_every and done % snapshot_every == 0 and done != train_cfg.steps:
            snapshots.append(_snapshot(params, trace_sequences, step=done))
    if trace_sequences and train_cfg.steps > 0:
        snapshots.append(_snapshot(params, trace_sequences, step=train_cfg.steps))

    return Checkpoint(
        model_cfg=model_cfg, train_cfg=train_cfg, params=params,
        opt_m=opt.m, opt_v=opt.v, opt_t=opt.t,
        step=train_cfg.steps, metric_log=metric_log, snapshots=snapshots,
    )


# ---------------------------------------------------------------------
# Checkpoint serialization: magic, version, length-prefixed UTF-8 JSON
# header, then raw little-endian float32 blobs in declaration order.
# ---------------------------------------------------------------------

def _cfg_to_dict(model_cfg: ModelConfig, train_cfg: TrainConfig) -> dict:
    loss = train_cfg.loss
    return {
        "model": {k: getattr(model_cfg, k) for k in (
            "n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "context_len")},
        "train": {k: getattr(train_cfg, k) for k in (
            "seed", "steps", "batch_size", "lr", "schedule", "warmup_steps",
            "weight_decay", "beta1", "beta2", "adam_eps")},
        "loss": {k: getattr(loss, k) for k in (
            "kind", "tau", "lambda_disp", "lambda_norm", "clamp_eps",
            "layer_aggregation", "decorrelation_divisor")},
    }


def _cfg_from_dict(d: dict) -> tuple[ModelConfig, TrainConfig]:
    model_cfg = ModelConfig(**d["model"])
    train_cfg = TrainConfig(**d["train"], loss=LossConfig(**d["loss"]))
    return model_cfg, train_cfg


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    if ckpt.params.dtype != np.float32:
        raise ValueError("checkpoints store 32-bit parameters; train in float32")
    names = [name for name, _ in ckpt.params.named()]
    header = dict(_cfg_to_dict(ckpt.model_cfg, ckpt.train_cfg))
    header.update({
        "step": ckpt.step,
        "opt_t": ckpt.opt_t,
        "arrays": [{"name": n, "shape": list(ckpt.params[n].shape)} for n in names],
        "metric_log": ckpt.metric_log,
        "snapshots": ckpt.snapshots,
    })
    header_bytes = jsonio.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<Q", len(header_bytes)))
    buf.write(header_bytes)
    for name in names:
        buf.write(np.ascontiguousarray(ckpt.params[name].data, dtype="<f4").tobytes())
    for store in (ckpt.opt_m, ckpt.opt_v):
        for name in names:
            buf.write(np.ascontiguousarray(store[name], dtype="<f4").tobytes())
    jsonio.atomic_write_bytes(path, buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError("bad checkpoint magic")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header_len = struct.unpack_from("<Q", raw, 8)[0]
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    model_cfg, train_cfg = _cfg_from_dict(header)
    offset = 16 + header_len

    def read_block(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        return arr.copy()

    tensors = {}
    for spec in header["arrays"]:
        tensors[spec["name"]] = Tensor(read_block(spec["shape"]), requires_grad=True)
    params = Params(model_cfg, tensors)
    opt_m = {spec["name"]: read_block(spec["shape"]) for spec in header["arrays"]}
    opt_v = {spec["name"]: read_block(spec["shape"]) for spec in header["arrays"]}
    if offset != len(raw):
        raise ValueError("checkpoint payload length mismatch")
    return Checkpoint(
        model_cfg=model_cfg, train_cfg=train_cfg, params=params,
        opt_m=opt_m, opt_v=opt_v, opt_t=header["opt_t"],
        step=header["step"], metric_log=header["metric_log"],
        snapshots=header["snapshots"],
    )
