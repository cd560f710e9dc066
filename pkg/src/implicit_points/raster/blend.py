"""Front-to-back alpha blending over per-pixel fragment runs, and its gradient.

Fragments arrive in "run layout": all fragments of one pixel are
contiguous and depth-ascending. Both passes walk the runs layer by layer
(the k-th fragment of every pixel at once), which mirrors the sequential
per-pixel loop while staying vectorized.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..scene import NUM_CHANNELS, NUM_SH, PointSet, eval_sh_degree2, sh_basis
from .projection import Fragments, Projected

ALPHA_MAX = 0.9999


class UnsortedFragmentsError(ValueError):
    pass


@dataclass(frozen=True)
class Runs:
    """Run structure of fragments in run layout."""

    pixel: np.ndarray   # (R,) pixel of each run
    start: np.ndarray   # (R,) first fragment of each run
    run_of: np.ndarray  # (F,) run id of each fragment
    rank: np.ndarray    # (F,) position within the run
    layers: list        # layers[k] = fragment ids with rank k (run order)


def find_runs(pixel: np.ndarray, check: bool = False, depth_key=None) -> Runs:
    F = len(pixel)
    if F == 0:
        z = np.zeros(0, np.int64)
        return Runs(z, z, z, z, [])
    brk = np.concatenate([[True], pixel[1:] != pixel[:-1]])
    start = np.nonzero(brk)[0]
    run_of = np.cumsum(brk) - 1
    rank = np.arange(F) - start[run_of]
    if check:
        rp = pixel[start]
        if len(np.unique(rp)) != len(rp):
            raise UnsortedFragmentsError("fragments of one pixel are not contiguous")
        if depth_key is not None:
            same = ~brk[1:]
            if np.any(depth_key[1:][same] < depth_key[:-1][same]):
                raise UnsortedFragmentsError("fragments are not depth-sorted within a pixel")
    order = np.argsort(rank, kind="stable")
    bounds = np.searchsorted(rank[order], np.arange(rank.max() + 2))
    layers = [order[bounds[k]:bounds[k + 1]] for k in range(len(bounds) - 1)]
    return Runs(pixel[start], start, run_of, rank, layers)


def fragment_alpha(frags: Fragments, opacity_rows: np.ndarray) -> np.ndarray:
    return np.clip(opacity_rows[frags.point] * frags.weight, 0.0, ALPHA_MAX)


def point_features(points: PointSet, proj: Projected) -> np.ndarray:
    """(M, 4) SH features of every projected point along its view direction."""
    if len(proj) == 0:
        return np.zeros((0, NUM_CHANNELS))
    return eval_sh_degree2(points.sh_coeffs[proj.index], proj.view_dir)


@dataclass
class BlendOutput:
    pixel: np.ndarray      # (R,) pixels touched by at least one fragment
    color: np.ndarray      # (R, 4) blended fragments plus background
    t_end: np.ndarray      # (R,) residual transmittance
    t_frag: np.ndarray     # (F,) transmittance in front of each fragment


def blend_runs(runs: Runs, alpha: np.ndarray, feat: np.ndarray,
               bg_runs: np.ndarray) -> BlendOutput:
    R = len(runs.pixel)
    T = np.ones(R)
    acc = np.zeros((R, NUM_CHANNELS))
    t_frag = np.empty(len(alpha))
    for layer in runs.layers:
        r = runs.run_of[layer]
        a = alpha[layer]
        t = T[r]
        t_frag[layer] = t
        acc[r] += (t * a)[:, None] * feat[layer]
        T[r] = t * (1.0 - a)
    acc += T[:, None] * bg_runs
    return BlendOutput(runs.pixel, acc, T, t_frag)


def blend_runs_backward(runs: Runs, alpha: np.ndarray, feat: np.ndarray, bg_runs: np.ndarray,
                        t_frag: np.ndarray, t_end: np.ndarray, grad_runs: np.ndarray,
                        skip_zero_alpha: bool = False):
    """Per-fragment gradients ``(d_alpha (F,), d_feat (F, 4))``.

    ``d pixel / d alpha_k = T_k f_k - (sum_{i>k} T_i a_i f_i + T_end f_bg) / (1 - a_k)``,
    which at ``a_k = 0`` is ``T_k f_k - sum_{i>k} a_i T_i f_i - T_end f_bg``.
    With ``skip_zero_alpha`` the zero-alpha fragments get no alpha gradient.
    """
    behind = t_end[:, None] * bg_runs  # everything behind the current layer
    d_alpha = np.zeros(len(alpha))
    d_feat = np.zeros((len(alpha), NUM_CHANNELS))
    for layer in reversed(runs.layers):
        r = runs.run_of[layer]
        a = alpha[layer]
        t = t_frag[layer]
        g = grad_runs[r]
        f = feat[layer]
        d_feat[layer] = (t * a)[:, None] * g
        da = np.sum(g * (t[:, None] * f - behind[r] / (1.0 - a)[:, None]), axis=1)
        if skip_zero_alpha:
            da = np.where(a == 0.0, 0.0, da)
        d_alpha[layer] = da
        behind[r] += (t * a)[:, None] * f
    return d_alpha, d_feat


@dataclass(frozen=True)
class GradientBuffers:
    d_opacity: np.ndarray   # (N,)
    d_sh: np.ndarray        # (N, 4, 9)
    d_alpha: Optional[np.ndarray] = None  # (F,) per fragment, run layout


def chain_to_points(points: PointSet, proj: Projected, frags: Fragments,
                    d_alpha: np.ndarray, d_feat: np.ndarray):
    """Per-projected-row opacity and feature gradients, accumulated in fragment order."""
    M = len(proj)
    o = points.opacities[proj.index]
    raw = o[frags.point] * frags.weight
    live = raw < ALPHA_MAX  # the clamp blocks the gradient
    d_o = np.bincount(frags.point, weights=np.where(live, d_alpha * frags.weight, 0.0),
                      minlength=M)
    d_f = np.stack([np.bincount(frags.point, weights=d_feat[:, c], minlength=M)
                    for c in range(NUM_CHANNELS)], axis=1) if M else np.zeros((0, NUM_CHANNELS))
    return d_o, d_f


def scatter_point_grads(points: PointSet, proj: Projected, d_o_rows: np.ndarray,
                        d_f_rows: np.ndarray) -> GradientBuffers:
    N = len(points)
    d_opacity = np.zeros(N)
    d_sh = np.zeros((N, NUM_CHANNELS, NUM_SH))
    if len(proj):
        d_opacity[proj.index] = d_o_rows
        d_sh[proj.index] = d_f_rows[:, :, None] * sh_basis(proj.view_dir)[:, None, :]
    return GradientBuffers(d_opacity, d_sh)


def blend_forward(frags: Fragments, proj: Projected, points: PointSet, background: np.ndarray,
                  width: int, height: int, debug: bool = False):
    """Alpha-blend fragments in run layout into a full image.

    Returns ``(features (H, W, 4), transmittance (H, W))``.
    """
    bg = np.asarray(background, dtype=np.float64).reshape(height * width, NUM_CHANNELS)
    runs = find_runs(frags.pixel, check=debug, depth_key=frags.depth_key)
    alpha = fragment_alpha(frags, points.opacities[proj.index])
    feat = point_features(points, proj)[frags.point] if len(frags) else np.zeros((0, 4))
    out = blend_runs(runs, alpha, feat, bg[runs.pixel])
    img = bg.copy()
    trans = np.ones(height * width)
    img[out.pixel] = out.color
    trans[out.pixel] = out.t_end
    return img.reshape(height, width, NUM_CHANNELS), trans.reshape(height, width)


def blend_backward(frags: Fragments, proj: Projected, points: PointSet, background: np.ndarray,
                   grad_image: np.ndarray, width: int, height: int,
                   skip_zero_alpha: bool = False) -> GradientBuffers:
    """Gradients of ``sum(grad_image * image)`` w.r.t. opacities and SH coefficients."""
    g = np.asarray(grad_image, dtype=np.float64)
    if g.shape != (height, width, NUM_CHANNELS):
        raise ValueError(f"upstream gradient must be ({height}, {width}, 4), got {g.shape}")
    bg = np.asarray(background, dtype=np.float64).reshape(height * width, NUM_CHANNELS)
    runs = find_runs(frags.pixel)
    alpha = fragment_alpha(frags, points.opacities[proj.index])
    feat = point_features(points, proj)[frags.point] if len(frags) else np.zeros((0, 4))
    bgr = bg[runs.pixel]
    out = blend_runs(runs, alpha, feat, bgr)
    d_alpha, d_feat = blend_runs_backward(runs, alpha, feat, bgr, out.t_frag, out.t_end,
                                          g.reshape(-1, NUM_CHANNELS)[runs.pixel],
                                          skip_zero_alpha)
    d_o, d_f = chain_to_points(points, proj, frags, d_alpha, d_feat)
    grads = scatter_point_grads(points, proj, d_o, d_f)
    return GradientBuffers(grads.d_opacity, grads.d_sh, d_alpha)
