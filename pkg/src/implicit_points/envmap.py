"""Equirectangular background maps: bilinear lookup and distillation.

Convention: world y is up. Azimuth ``atan2(dx, dz)`` maps to the column
coordinate ``u = (phi / 2pi + 0.5) W`` and polar angle ``acos(dy)`` to the
row coordinate ``v = theta / pi * H``. Texel (r, c) has its center at
``(c + 0.5, r + 0.5)``. Columns wrap; rows clamp at the poles.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .scene import NUM_CHANNELS, sh_basis

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvironmentMap:
    texels: np.ndarray  # (H, W, 4)

    def __post_init__(self):
        t = np.array(self.texels, dtype=np.float64)
        if t.ndim != 3 or t.shape[2] != NUM_CHANNELS:
            raise ValueError("environment map must be HxWx4")
        if t.shape[1] != 2 * t.shape[0]:
            raise ValueError("environment map width must be twice its height")
        if not np.all(np.isfinite(t)):
            raise ValueError("environment map values must be finite")
        t.flags.writeable = False
        object.__setattr__(self, "texels", t)

    @property
    def height(self) -> int:
        return self.texels.shape[0]

    @property
    def width(self) -> int:
        return self.texels.shape[1]

    def __call__(self, dirs: np.ndarray) -> np.ndarray:
        return sample_env(self, dirs)


def texel_directions(height: int, width: int) -> np.ndarray:
    """World direction through every texel center, shape (H, W, 3)."""
    v = (np.arange(height) + 0.5) / height
    u = (np.arange(width) + 0.5) / width
    theta = v * np.pi
    phi = (u - 0.5) * 2 * np.pi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    return np.stack([np.sin(th) * np.sin(ph), np.cos(th), np.sin(th) * np.cos(ph)], axis=-1)


def bilinear_taps(dirs: np.ndarray, height: int, width: int):
    """Texel indices and weights of the 4 bilinear taps for each direction.

    Returns ``(rows (N,4), cols (N,4), weights (N,4))``.
    """
    d = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = np.linalg.norm(d, axis=1)
    if np.any(n == 0) or not np.all(np.isfinite(n)):
        raise ValueError("zero-length or non-finite direction")
    d = d / n[:, None]
    u = (np.arctan2(d[:, 0], d[:, 2]) / (2 * np.pi) + 0.5) * width
    v = np.arccos(np.clip(d[:, 1], -1.0, 1.0)) / np.pi * height
    us, vs = u - 0.5, v - 0.5
    c0 = np.floor(us)
    r0 = np.floor(vs)
    fu, fv = us - c0, vs - r0
    c0 = c0.astype(np.int64)
    r0 = r0.astype(np.int64)
    cols = np.stack([c0, c0 + 1, c0, c0 + 1], axis=1) % width
    rows = np.clip(np.stack([r0, r0, r0 + 1, r0 + 1], axis=1), 0, height - 1)
    w = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=1)
    return rows, cols, w


def sample_env(env: EnvironmentMap, dirs: np.ndarray) -> np.ndarray:
    """Bilinear lookup; ``dirs`` (..., 3) -> (..., 4)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    rows, cols, w = bilinear_taps(dirs, env.height, env.width)
    taps = env.texels.reshape(-1, NUM_CHANNELS)[rows * env.width + cols]
    out = (w[:, 0, None] * taps[:, 0] + w[:, 1, None] * taps[:, 1]
           + w[:, 2, None] * taps[:, 2] + w[:, 3, None] * taps[:, 3])
    return out.reshape(dirs.shape[:-1] + (NUM_CHANNELS,))


def sample_env_texel_grad(env: EnvironmentMap, dirs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of ``sum(upstream * sample_env(env, dirs))`` w.r.t. the texels."""
    rows, cols, w = bilinear_taps(dirs, env.height, env.width)
    g = np.asarray(upstream, dtype=np.float64).reshape(-1, NUM_CHANNELS)
    return _scatter(rows, cols, w, g, env.height, env.width)


def _scatter(rows, cols, w, g, height, width):
    flat = (rows * width + cols)[:, :, None] * NUM_CHANNELS + np.arange(NUM_CHANNELS)
    contrib = w[:, :, None] * g[:, None, :]
    # bincount accumulates in input order, so the scatter is deterministic
    out = np.bincount(flat.reshape(-1), weights=contrib.reshape(-1),
                      minlength=height * width * NUM_CHANNELS)
    return out.reshape(height, width, NUM_CHANNELS)


def random_directions(rng: np.random.Generator, n: int) -> np.ndarray:
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


# --------------------------------------------------------------------------
# Background oracles
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SHBackground:
    """Band-limited background: one degree-2 SH block over world directions."""

    coeffs: np.ndarray  # (4, 9)

    @classmethod
    def from_seed(cls, seed: int) -> "SHBackground":
        rng = np.random.default_rng([0xB6, int(seed)])
        c = rng.normal(size=(NUM_CHANNELS, 9)) * np.array([0.0, 0.3, 0.3, 0.3, 0.15, 0.15, 0.15, 0.15, 0.15])
        c[:, 0] = rng.uniform(0.6, 1.4, size=NUM_CHANNELS)
        return cls(c)

    def __call__(self, dirs: np.ndarray) -> np.ndarray:
        dirs = np.asarray(dirs, dtype=np.float64)
        return sh_basis(dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)) @ self.coeffs.T


@dataclass(frozen=True)
class ConstantBackground:
    value: tuple

    def __call__(self, dirs: np.ndarray) -> np.ndarray:
        dirs = np.asarray(dirs)
        return np.broadcast_to(np.asarray(self.value, dtype=np.float64),
                               dirs.shape[:-1] + (NUM_CHANNELS,)).copy()


# --------------------------------------------------------------------------
# Distillation
# --------------------------------------------------------------------------

@dataclass
class DistillConfig:
    height: int = 256
    width: int = 512
    iterations: int = 1000
    batch: int = 1 << 16
    lr_start: float = 0.01
    lr_end: float = 0.001
    seed: int = 0
    optimizer: str = "adam"
    init_samples: int = 1 << 16
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-3  # in residual units, see distill_env
    probe: int = 0          # size of a fixed direction set scored every probe_every iterations
    probe_every: int = 10

    @classmethod
    def full_scale(cls, **kw) -> "DistillConfig":
        base = dict(height=1024, width=2048, iterations=1000, batch=1 << 21)
        base.update(kw)
        return cls(**base)

    def lr(self, it: int) -> float:
        if self.iterations <= 1:
            return self.lr_start
        f = it / (self.iterations - 1)
        return self.lr_start * (self.lr_end / self.lr_start) ** f


@dataclass
class DistillResult:
    env: EnvironmentMap
    losses: list = field(default_factory=list)
    probe_losses: list = field(default_factory=list)  # (iteration, mse on the fixed probe set)


def distill_env(oracle: Callable[[np.ndarray], np.ndarray],
                config: Optional[DistillConfig] = None) -> DistillResult:
    """Fit an equirectangular map to ``oracle`` by minibatch gradient descent.

    The loss is the mean squared error over channels and a fresh batch of
    uniformly random directions each iteration. Texels start at a Monte
    Carlo estimate of the oracle's spherical mean.
    """
    cfg = config or DistillConfig()
    if cfg.width != 2 * cfg.height:
        raise ValueError("map width must be twice its height")
    rng = np.random.default_rng(cfg.seed)
    mean = np.mean(oracle(random_directions(rng, cfg.init_samples)), axis=0)
    tex = np.broadcast_to(mean, (cfg.height, cfg.width, NUM_CHANNELS)).copy()
    m = np.zeros_like(tex)
    v = np.zeros_like(tex)
    b1, b2 = cfg.adam_betas
    # a uniform residual r gives a texel gradient of about 2 r / (H W C)
    eps = cfg.adam_eps * 2.0 / (cfg.height * cfg.width * NUM_CHANNELS)
    losses = []
    probe_losses = []
    if cfg.probe:
        pdirs = random_directions(np.random.default_rng([cfg.seed, 0x9B0BE]), cfg.probe)
        ptarget = oracle(pdirs)
        prows, pcols, pw = bilinear_taps(pdirs, cfg.height, cfg.width)
        pidx = prows * cfg.width + pcols
    for it in range(cfg.iterations):
        dirs = random_directions(rng, cfg.batch)
        target = oracle(dirs)
        rows, cols, w = bilinear_taps(dirs, cfg.height, cfg.width)
        flat_tex = tex.reshape(-1, NUM_CHANNELS)
        idx = rows * cfg.width + cols
        pred = np.einsum("nk,nkc->nc", w, flat_tex[idx])
        resid = pred - target
        loss = float(np.mean(resid * resid))
        if not math.isfinite(loss):
            raise FloatingPointError(
                f"non-finite distillation loss at iteration {it} "
                f"(lr={cfg.lr(it):.3g}, |tex|max={np.abs(tex).max():.3g})")
        losses.append(loss)
        if cfg.probe and it % cfg.probe_every == 0:
            pp = np.einsum("nk,nkc->nc", pw, flat_tex[pidx])
            probe_losses.append((it, float(np.mean((pp - ptarget) ** 2))))
        grad = _scatter(rows, cols, w, resid * (2.0 / resid.size), cfg.height, cfg.width)
        lr = cfg.lr(it)
        if cfg.optimizer == "sgd":
            tex -= lr * grad
        elif cfg.optimizer == "adam":
            m *= b1
            m += (1 - b1) * grad
            np.multiply(grad, grad, out=grad)
            v *= b2
            v += (1 - b2) * grad
            denom = np.sqrt(v / (1 - b2 ** (it + 1)))
            denom += eps
            tex -= (lr / (1 - b1 ** (it + 1))) * m / denom
        else:
            raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
        if it % 100 == 0:
            log.debug("distill iter %d loss %.3e lr %.3e", it, loss, lr)
    return DistillResult(EnvironmentMap(tex), losses, probe_losses)


def psnr(pred: np.ndarray, target: np.ndarray, peak: Optional[float] = None) -> float:
    """PSNR in dB; ``peak`` defaults to the target's dynamic range."""
    mse = float(np.mean((np.asarray(pred) - np.asarray(target)) ** 2))
    if peak is None:
        peak = float(np.max(target) - np.min(target))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak * peak / mse)
