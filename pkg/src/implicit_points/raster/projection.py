"""Pinhole projection and per-pixel fragment generation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import CameraView, PointSet


@dataclass(frozen=True)
class Projected:
    """Points that survived near-plane culling, in ascending point order.

    ``xy`` uses continuous pixel coordinates where pixel ``i`` spans
    ``[i, i+1)`` and has its center at ``i + 0.5``.
    """

    index: np.ndarray     # (M,) original point index
    xy: np.ndarray        # (M, 2)
    depth: np.ndarray     # (M,) camera-space z
    cam: np.ndarray       # (M, 3) camera-space position
    view_dir: np.ndarray  # (M, 3) unit world direction camera -> point

    def __len__(self) -> int:
        return len(self.index)

    @property
    def depth_key(self) -> np.ndarray:
        return depth_key(self.depth)


def depth_key(depth: np.ndarray) -> np.ndarray:
    """Order-preserving 32-bit key: the float32 bit pattern of a positive depth."""
    d = np.asarray(depth, dtype=np.float32)
    if np.any(~(d > 0)):
        raise ValueError("depth keys need strictly positive depths")
    return d.view(np.uint32)


def project_points(points: PointSet, camera: CameraView) -> Projected:
    pc = camera.to_camera(points.positions)
    keep = np.nonzero(pc[:, 2] > camera.z_near)[0]
    pc = pc[keep]
    z = pc[:, 2]
    xd, yd = camera.distort(pc[:, 0] / z, pc[:, 1] / z)
    xy = np.stack([camera.fx * xd + camera.cx, camera.fy * yd + camera.cy], axis=-1)
    d = points.positions[keep] - camera.center
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return Projected(keep.astype(np.int64), xy, z, pc, d)


@dataclass(frozen=True)
class Fragments:
    """One record per (point, pixel) contribution.

    ``point`` indexes rows of the :class:`Projected` the fragments came from.
    """

    pixel: np.ndarray      # (F,) flat pixel index y*W + x
    depth_key: np.ndarray  # (F,) uint32
    point: np.ndarray      # (F,)
    weight: np.ndarray     # (F,)

    def __len__(self) -> int:
        return len(self.pixel)

    def take(self, order: np.ndarray) -> "Fragments":
        return Fragments(self.pixel[order], self.depth_key[order], self.point[order],
                         self.weight[order])

    @classmethod
    def concatenate(cls, parts) -> "Fragments":
        parts = list(parts)
        if not parts:
            return empty_fragments()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("pixel", "depth_key", "point", "weight")))


def empty_fragments() -> Fragments:
    return Fragments(np.zeros(0, np.int64), np.zeros(0, np.uint32), np.zeros(0, np.int64),
                     np.zeros(0))


def bilinear_corners(xy: np.ndarray):
    """Integer corner pixels and weights of the 2x2 block around each position.

    Returns ``(px (M,4), py (M,4), w (M,4))`` in corner order
    (x0,y0), (x0+1,y0), (x0,y0+1), (x0+1,y0+1). Weights always sum to 1.
    """
    xs = xy[:, 0] - 0.5
    ys = xy[:, 1] - 0.5
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    px = np.stack([x0, x0 + 1, x0, x0 + 1], axis=1)
    py = np.stack([y0, y0, y0 + 1, y0 + 1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return px, py, w


def gen_fragments_bilinear(proj: Projected, width: int, height: int) -> Fragments:
    """2x2 bilinear splats; fragments off the image are dropped.

    Zero-weight corners are kept: they carry alpha = 0 and still receive
    gradients through the blending equation.
    """
    px, py, w = bilinear_corners(proj.xy)
    inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    row = np.repeat(np.arange(len(proj)), 4).reshape(-1, 4)
    keys = np.repeat(proj.depth_key, 4).reshape(-1, 4)
    return Fragments((py * width + px)[inside], keys[inside], row[inside], w[inside])


def pixel_bbox_bilinear(proj: Projected, width: int, height: int):
    """Inclusive pixel bounding box of each 2x2 splat, clipped to the image."""
    xs = np.floor(proj.xy[:, 0] - 0.5).astype(np.int64)
    ys = np.floor(proj.xy[:, 1] - 0.5).astype(np.int64)
    return (np.maximum(xs, 0), np.maximum(ys, 0),
            np.minimum(xs + 1, width - 1), np.minimum(ys + 1, height - 1))
