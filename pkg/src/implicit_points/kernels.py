"""Fused element-wise kernels: spherical contraction, Cauchy loss, weight decay."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def contract(x: np.ndarray) -> np.ndarray:
    """Map unbounded positions into the radius-2 ball.

    Identity inside the unit ball, ``(2 - 1/|x|) x/|x|`` outside. Evaluated
    in one pass over the batch without intermediate masks.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    # max() keeps the division finite for the interior branch
    rs = np.maximum(r, 1.0)
    return x * ((2.0 - 1.0 / rs) / rs)


@dataclass(frozen=True)
class LossResult:
    loss: float
    grad: np.ndarray


def cauchy_loss(residuals: np.ndarray, c: float = 1.0) -> LossResult:
    """Mean Cauchy loss ``log1p(0.5 (x/c)^2)`` and its gradient."""
    if not c > 0:
        raise ValueError("Cauchy scale must be positive")
    x = np.asarray(residuals, dtype=np.float64)
    n = max(x.size, 1)
    z = x / c
    loss = float(np.sum(np.log1p(0.5 * z * z)) / n)
    grad = (2.0 * x / (2.0 * c * c + x * x)) / n
    return LossResult(loss, grad)


def add_weight_decay_grad(weights: np.ndarray, grads: np.ndarray, lam: float) -> np.ndarray:
    """Add the gradient of ``lam * mean(w^2)`` to ``grads`` without forming the loss.

    Returns a new array; ``grads`` is not modified.
    """
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if w.shape != g.shape:
        raise ValueError(f"shape mismatch: weights {w.shape} vs grads {g.shape}")
    if lam == 0:
        return g.copy()
    return g + (2.0 * lam / max(w.size, 1)) * w
