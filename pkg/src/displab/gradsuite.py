"""The autodiff-vs-finite-difference verification suite.

Checks every loss in the dispersion family, the distillation loss, and a
random transformer parameter probe against central differences at 64-bit
precision. Shapes stay small (N <= 8, d <= 16, V <= 8) so the whole
suite runs in seconds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gradcheck import finite_difference_gradient, max_relative_error
from .losses import (
    LossConfig,
    combined_objective,
    decorrelation_loss,
    dispersion_loss,
    kd_loss,
    l2_repel_loss,
    orthogonalization_loss,
)
from .model import ModelConfig, cross_entropy, forward, init_params
from .ndcore import Tensor, backward, zero_grads

__all__ = ["GradCheckResult", "run_gradient_suite", "TOLERANCE"]

TOLERANCE = 1e-4
FD_STEP = 1e-6


@dataclass
class GradCheckResult:
    name: str
    error: float
    tolerance: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return self.error < self.tolerance


def _check_loss(name, fn, z0, h=FD_STEP) -> GradCheckResult:
    leaf = Tensor(z0, requires_grad=True)
    backward(fn(leaf))
    fd = finite_difference_gradient(lambda z: fn(Tensor(z, requires_grad=True)).item(), z0, h=h)
    return GradCheckResult(name, max_relative_error(leaf.grad, fd))


def _check_model_probe(seed: int) -> GradCheckResult:
    cfg = ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, vocab_size=8, context_len=8)
    params = init_params(cfg, seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 100)
    inputs = rng.integers(0, 8, size=(2, 6))
    targets = rng.integers(0, 8, size=(2, 6))
    loss_cfg = LossConfig(lambda_disp=0.1, tau=1.0)

    def total_loss():
        logits, layers, _ = forward(params, inputs)
        return combined_objective(cross_entropy(logits, targets), layers[1:], loss_cfg)

    zero_grads(params.tensors())
    backward(total_loss())
    names = [n for n, _ in params.named()]
    coords = [(names[rng.integers(0, len(names))], int(rng.integers(0, 10_000)))
              for _ in range(10)]
    coords = [(n, i % params[n].size) for n, i in coords]
    analytic = np.array([float(params[n].grad.flat[i]) for n, i in coords])
    base = {n: params[n].data.copy() for n, _ in coords}

    def f(vec):
        for (n, i), v in zip(coords, vec):
            params[n].data.flat[i] = v
        val = total_loss().item()
        for n, _ in coords:
            params[n].data[:] = base[n]
        return val

    x0 = np.array([float(base[n].flat[i]) for n, i in coords])
    fd = finite_difference_gradient(f, x0, h=FD_STEP)
    return GradCheckResult("transformer parameter probe (10 coords)",
                           max_relative_error(analytic, fd))


def run_gradient_suite(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    z84 = rng.uniform(-2, 2, size=(8, 16))
    z65 = rng.uniform(-2, 2, size=(6, 12))
    # acute-angle rows keep the orthogonalization hinge active everywhere
    z_acute = rng.uniform(0.1, 2.0, size=(6, 12))
    teacher = rng.normal(size=5)
    student0 = rng.normal(size=5)

    results = [
        _check_loss("dispersion_loss (N=8, d=16)",
                    lambda z: dispersion_loss(z, tau=0.8, clamp_eps=1e-6), z84),
        _check_loss("decorrelation_loss (N=6, d=12)",
                    lambda z: decorrelation_loss(z), z65),
        _check_loss("l2_repel_loss (N=6, d=12)",
                    lambda z: l2_repel_loss(z, tau=1.3, lambda_norm=0.05), z65),
        _check_loss("orthogonalization_loss (N=6, d=12)",
                    lambda z: orthogonalization_loss(z), z_acute),
        _check_loss("kd_loss (V=5) wrt student",
                    lambda s: kd_loss(teacher, s, tau=1.7), student0),
        _check_model_probe(seed),
    ]
    return results
