"""Synthetic scene generators for the CLI and the test-suite."""
from __future__ import annotations

import numpy as np

from .scene import CameraView, ProbabilityField

KINDS = ("boxes", "blobs", "shell")
DEFAULT_RESOLUTION = 128
DEFAULT_CAMERAS = 24


def _lattice_centers(res: int) -> np.ndarray:
    c = (np.arange(res) + 0.5) / res * 2.0 - 1.0
    return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)


def _box_surface(p, lo, hi, h):
    """Voxels within half a cell of an axis-aligned box surface."""
    inside = np.all((p >= lo - h) & (p <= hi + h), axis=-1)
    core = np.all((p > lo + h) & (p < hi - h), axis=-1)
    return inside & ~core


def make_field(kind: str, seed: int, resolution: int = DEFAULT_RESOLUTION) -> ProbabilityField:
    """Deterministic probability field over the cube [-1, 1]^3."""
    if kind not in KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; expected one of {KINDS}")
    rng = np.random.default_rng([0x5CE4E, int(seed), KINDS.index(kind)])
    p = _lattice_centers(resolution)
    h = 1.0 / resolution
    if kind == "boxes":
        occ = _box_surface(p, np.full(3, -0.95), np.full(3, 0.95), h)
        for _ in range(2):
            size = rng.uniform(0.2, 0.45, 3)
            c = np.r_[rng.uniform(-0.5, 0.5), -0.95 + size[1], rng.uniform(-0.5, 0.5)]
            occ |= _box_surface(p, c - size, c + size, h)
        weight = np.where(occ, 1.0, 0.0)
    elif kind == "blobs":
        dens = np.zeros(len(p))
        for _ in range(6):
            c = rng.uniform(-0.6, 0.6, 3)
            s = rng.uniform(0.06, 0.16)
            dens += np.exp(-0.5 * np.sum((p - c) ** 2, axis=1) / s ** 2)
        weight = np.where(dens > 0.6, dens, 0.0)
    else:
        r = np.linalg.norm(p, axis=1)
        weight = np.where(np.abs(r - 0.7) < 1.5 * h * 2, 1.0, 0.0)
    keep = np.nonzero(weight > 0)[0]
    idx = np.floor((p[keep] + 1.0) * 0.5 * resolution).astype(np.int64)
    jitter = rng.uniform(0.5, 1.5, len(keep))
    return ProbabilityField(resolution, np.full(3, -1.0), np.full(3, 1.0), idx, weight[keep] * jitter)


def camera_ring(kind: str, count: int = DEFAULT_CAMERAS, width: int = 128, height: int = 96,
                z_near: float = 0.05) -> list:
    """Cameras on a horizontal circle looking at the scene center."""
    radius, elev = (0.6, 0.1) if kind == "boxes" else (2.4, 0.5)
    f = 0.9 * width
    cams = []
    for i in range(count):
        a = 2 * np.pi * i / count
        eye = np.array([radius * np.sin(a), elev, radius * np.cos(a)])
        target = np.array([0.0, 0.0, 0.0]) if kind != "boxes" else -eye * np.array([1, 0, 1])
        cams.append(CameraView.look_at(eye, target, fx=f, fy=f, cx=width / 2, cy=height / 2,
                                       width=width, height=height, z_near=z_near))
    return cams
