"""Naive reference renderer used as the correctness oracle.

Per-point footprints are gathered into per-pixel Python lists, each list is
sorted with ``sorted`` on (32-bit depth, point index) and blended one
fragment at a time. Nothing here is shared with the tiled pipeline beyond
projection and SH evaluation.
"""
from __future__ import annotations

import math
from collections import defaultdict
from typing import Optional

import numpy as np

from ..scene import NUM_CHANNELS, CameraView, FeatureImage, PointSet
from . import gaussian as gs
from .blend import ALPHA_MAX, point_features
from .projection import project_points


def render_reference(points: PointSet, camera: CameraView, background: np.ndarray,
                     mode: str = "bilinear", gaussian_scale: Optional[float] = None,
                     dilation: float = gs.DEFAULT_DILATION) -> FeatureImage:
    W, H = camera.width, camera.height
    bg = np.asarray(background, dtype=np.float64).reshape(H, W, NUM_CHANNELS)
    proj = project_points(points, camera)
    feats = point_features(points, proj).tolist()
    opac = points.opacities[proj.index].tolist()
    depth32 = np.asarray(proj.depth, dtype=np.float32).tolist()
    index = proj.index.tolist()
    lists = defaultdict(list)

    if mode == "bilinear":
        for row, (x, y) in enumerate(proj.xy.tolist()):
            xs, ys = x - 0.5, y - 0.5
            x0, y0 = math.floor(xs), math.floor(ys)
            fx, fy = xs - x0, ys - y0
            for px, py, w in ((x0, y0, (1 - fx) * (1 - fy)), (x0 + 1, y0, fx * (1 - fy)),
                              (x0, y0 + 1, (1 - fx) * fy), (x0 + 1, y0 + 1, fx * fy)):
                if 0 <= px < W and 0 <= py < H:
                    lists[(py, px)].append((depth32[row], index[row], row, w))
    elif mode == "gaussian":
        if gaussian_scale is None:
            gaussian_scale = gs.gaussian_world_scale(camera)
        g = gs.project_gaussian(proj, gaussian_scale, camera, dilation)
        for row in range(len(proj)):
            mx, my = g.mean[row]
            r = g.radius[row]
            a, b, c = g.conic[row]
            for py in range(max(0, math.ceil(my - r - 0.5)), min(H - 1, math.floor(my + r - 0.5)) + 1):
                for px in range(max(0, math.ceil(mx - r - 0.5)), min(W - 1, math.floor(mx + r - 0.5)) + 1):
                    dx = px + 0.5 - mx
                    dy = py + 0.5 - my
                    m = dx * dx * a + 2.0 * dx * dy * b + dy * dy * c
                    if m <= gs._CUTOFF:
                        lists[(py, px)].append((depth32[row], index[row], row, math.exp(-0.5 * m)))
    else:
        raise ValueError(f"unknown splat mode {mode!r}")

    img = bg.copy()
    trans = np.ones((H, W))
    for (py, px), frs in lists.items():
        frs = sorted(frs, key=lambda f: (f[0], f[1]))
        T = 1.0
        acc = [0.0] * NUM_CHANNELS
        for _, _, row, w in frs:
            alpha = min(max(opac[row] * w, 0.0), ALPHA_MAX)
            f = feats[row]
            for ch in range(NUM_CHANNELS):
                acc[ch] += T * alpha * f[ch]
            T *= 1.0 - alpha
        img[py, px] = [acc[ch] + T * bg[py, px, ch] for ch in range(NUM_CHANNELS)]
        trans[py, px] = T
    return FeatureImage(img, trans)
