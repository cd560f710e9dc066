"""Turning a probability field into explicit point clouds.

View-specific sampling runs ``view_pdf -> allocate_counts -> rejection_sample``
and then queries appearance. Global pre-extraction builds one
view-independent PDF from the per-voxel maximum over training views and
places points with per-voxel Halton sequences. ``RingBuffer`` keeps the
last few view-specific clouds so each frame only samples one new cloud.
"""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Optional, Sequence, Tuple

import numpy as np

from .kernels import contract
from .scene import AppearanceOracle, CameraView, PointSet, ProbabilityField, hash32

DEFAULT_VIEW_SAMPLES = 1 << 23
DEFAULT_GLOBAL_SAMPLES = 1 << 25
DEFAULT_RING_CAPACITY = 4
VISFRAC_LATTICE = 4
ATTEMPT_CAP = 10_000


class EmptyFrustumError(ValueError):
    pass


class DegenerateVisibilityError(RuntimeError):
    pass


def in_frustum(camera: CameraView, points: np.ndarray) -> np.ndarray:
    """True where a world point is beyond the near plane and inside the image."""
    pc = camera.to_camera(points)
    z = pc[..., 2]
    ok = z > camera.z_near
    zs = np.where(ok, z, 1.0)
    u = camera.fx * pc[..., 0] / zs + camera.cx
    v = camera.fy * pc[..., 1] / zs + camera.cy
    return ok & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)


def visible_fraction(field_: ProbabilityField, camera: CameraView,
                     lattice: int = VISFRAC_LATTICE) -> np.ndarray:
    """Fraction of a fixed ``lattice^3`` set of sub-points inside the frustum."""
    off = (np.arange(lattice) + 0.5) / lattice
    sub = np.stack(np.meshgrid(off, off, off, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = field_.origins[:, None, :] + field_.voxel_size * sub[None]
    return in_frustum(camera, pts).mean(axis=1)


@dataclass(frozen=True)
class VoxelPDF:
    voxel_ids: np.ndarray     # positions in the field's canonical voxel order
    weights: np.ndarray       # normalized, sums to 1
    normalization: float      # sum of the unnormalized weights
    visfrac: np.ndarray

    def __len__(self) -> int:
        return len(self.voxel_ids)

    @property
    def raw_weights(self) -> np.ndarray:
        return self.weights * self.normalization


def view_weights(field_: ProbabilityField, camera: CameraView, exponent: float = 2.0):
    """Unnormalized per-voxel view weights and visible fractions for every voxel."""
    vis = visible_fraction(field_, camera)
    dist = np.linalg.norm(field_.centers - camera.center, axis=1)
    dist = np.maximum(dist, camera.z_near)
    w = field_.weights * vis * (field_.sizes / dist) ** exponent
    return w, vis


def view_pdf(field_: ProbabilityField, camera: CameraView, exponent: float = 2.0) -> VoxelPDF:
    w, vis = view_weights(field_, camera, exponent)
    keep = np.nonzero(vis > 0)[0]
    total = float(np.sum(w[keep]))
    if len(keep) == 0 or total <= 0:
        raise EmptyFrustumError("empty frustum: no voxel with positive weight is visible")
    return VoxelPDF(keep, w[keep] / total, total, vis[keep])


def allocate_counts(pdf: VoxelPDF, n: int, seed: int) -> np.ndarray:
    """Multinomial sample counts with every positive-weight voxel sampled at least once.

    Voxels that drew zero samples take one from the voxel currently holding
    the most samples (lowest position wins ties). The total stays ``n``.
    """
    weights = np.asarray(pdf.weights, dtype=np.float64)
    if n < len(weights):
        raise ValueError(f"{n} samples cannot cover {len(weights)} voxels at least once")
    rng = np.random.default_rng([0x5A3, int(seed)])
    p = weights / weights.sum()
    counts = rng.multinomial(n, p).astype(np.int64)
    missing = np.nonzero((counts == 0) & (weights > 0))[0]
    if len(missing):
        counts = _reassign(counts, len(missing))
        counts[missing] = 1
    return counts


def _reassign(counts: np.ndarray, k: int) -> np.ndarray:
    """Remove ``k`` samples, one at a time from the current largest count."""
    counts = counts.copy()
    heap = [(-int(c), i) for i, c in enumerate(counts) if c > 1]
    heapq.heapify(heap)
    for _ in range(k):
        if not heap:
            raise ValueError("not enough samples to satisfy the min-one rule")
        c, i = heapq.heappop(heap)
        counts[i] -= 1
        if counts[i] > 1:
            heapq.heappush(heap, (c + 1, i))
    return counts


def rejection_sample(field_: ProbabilityField, pdf: VoxelPDF, counts: np.ndarray,
                     camera: CameraView, seed: int) -> np.ndarray:
    """Uniform positions in (voxel ∩ frustum), exactly ``counts[v]`` per voxel.

    Candidates are drawn uniformly in the whole voxel and rejected when
    outside the frustum, so partially visible voxels are not biased. Output
    slots are ordered by voxel then by acceptance order within the voxel.
    """
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    out = np.empty((total, 3))
    if total == 0:
        return out
    origins = field_.origins[pdf.voxel_ids]
    size = field_.voxel_size
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    accepted = np.zeros(len(counts), dtype=np.int64)
    attempts = np.zeros(len(counts), dtype=np.int64)
    rate = np.clip(pdf.visfrac, 0.05, 1.0)
    rng = np.random.default_rng([0x2E7, int(seed)])
    need = counts.copy()
    while True:
        active = np.nonzero(need > 0)[0]
        if len(active) == 0:
            break
        over = active[attempts[active] >= ATTEMPT_CAP * counts[active]]
        if len(over):
            raise DegenerateVisibilityError(
                f"degenerate visibility: voxel {int(pdf.voxel_ids[over[0]])} exceeded "
                f"{ATTEMPT_CAP}x its sample count in attempts")
        draws = np.ceil(need[active] / rate[active] * 1.2).astype(np.int64) + 1
        owner = np.repeat(active, draws)
        cand = origins[owner] + size * rng.random((len(owner), 3))
        ok = in_frustum(camera, cand)
        attempts += np.bincount(owner, minlength=len(counts))
        # rank of each accepted candidate within its voxel (draw order)
        acc_owner = owner[ok]
        acc_pts = cand[ok]
        first = np.searchsorted(acc_owner, acc_owner, side="left")
        rank = np.arange(len(acc_owner)) - first
        take = rank < need[acc_owner]
        acc_owner, acc_pts, rank = acc_owner[take], acc_pts[take], rank[take]
        slot = offsets[acc_owner] + accepted[acc_owner] + rank
        out[slot] = acc_pts
        got = np.bincount(acc_owner, minlength=len(counts))
        accepted += got
        need -= got
    return out


def sample_view(field_: ProbabilityField, camera: CameraView, oracle: AppearanceOracle,
                n: int = DEFAULT_VIEW_SAMPLES, seed: int = 0,
                exponent: float = 2.0) -> PointSet:
    """Sample a view-specific point cloud and attach appearance."""
    if n == 0:
        return PointSet.empty()
    pdf = view_pdf(field_, camera, exponent)
    counts = allocate_counts(pdf, n, seed)
    pos = rejection_sample(field_, pdf, counts, camera, seed)
    return _with_appearance(pos, oracle)


def _with_appearance(positions: np.ndarray, oracle: AppearanceOracle) -> PointSet:
    opacity, sh = oracle.query(contract(positions))
    return PointSet(positions, opacity, sh)


# --------------------------------------------------------------------------
# Halton placement and global pre-extraction
# --------------------------------------------------------------------------

def radical_inverse(index: np.ndarray, base: int) -> np.ndarray:
    """Base-``base`` radical inverse of non-negative integers (0 -> 0)."""
    i = np.asarray(index, dtype=np.int64).copy()
    result = np.zeros(i.shape, dtype=np.float64)
    f = 1.0 / base
    while np.any(i > 0):
        result += f * (i % base)
        i //= base
        f /= base
    return result


def halton_points(origin, size: float, count: int, start_index: int = 0) -> np.ndarray:
    """``count`` points of the (2, 3, 5) Halton sequence scaled into one voxel."""
    if count < 0:
        raise ValueError("count must be non-negative")
    i = np.arange(start_index, start_index + count, dtype=np.int64)
    u = np.stack([radical_inverse(i, 2), radical_inverse(i, 3), radical_inverse(i, 5)], axis=-1)
    return np.asarray(origin, dtype=np.float64) + size * u


def halton_start_index(voxel_ids: np.ndarray) -> np.ndarray:
    return (hash32(voxel_ids) % np.uint32(1 << 16)).astype(np.int64)


def global_weights(field_: ProbabilityField, cameras: Sequence[CameraView],
                   exponent: float = 2.0) -> np.ndarray:
    """Per-voxel maximum of the unnormalized view weight over ``cameras``."""
    if len(cameras) == 0:
        raise ValueError("need at least one camera")
    g = np.zeros(len(field_))
    for cam in cameras:
        w, _ = view_weights(field_, cam, exponent)
        np.maximum(g, w, out=g)
    return g


def global_extract(field_: ProbabilityField, cameras: Sequence[CameraView],
                   oracle: AppearanceOracle, m: int = DEFAULT_GLOBAL_SAMPLES,
                   seed: int = 0, exponent: float = 2.0) -> PointSet:
    """View-independent point cloud from the max-over-views voxel PDF."""
    if m < 1:
        raise ValueError("m must be >= 1")
    g = global_weights(field_, cameras, exponent)
    total = g.sum()
    if total <= 0:
        raise EmptyFrustumError("no voxel is visible from any training camera")
    rng = np.random.default_rng([0x610B, int(seed)])
    counts = rng.multinomial(m, g / total)
    vox = np.nonzero(counts)[0]
    counts = counts[vox]
    starts = halton_start_index(field_.voxel_ids[vox])
    owner = np.repeat(np.arange(len(vox)), counts)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    idx = starts[owner] + (np.arange(len(owner)) - first[owner])
    u = np.stack([radical_inverse(idx, 2), radical_inverse(idx, 3), radical_inverse(idx, 5)], axis=-1)
    pos = field_.origins[vox][owner] + field_.voxel_size * u
    return _with_appearance(pos, oracle)


# --------------------------------------------------------------------------
# Ring buffer
# --------------------------------------------------------------------------

@dataclass
class RingBuffer:
    capacity: int = DEFAULT_RING_CAPACITY
    clouds: Deque[Tuple[int, PointSet]] = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("ring buffer capacity must be >= 1")

    def __len__(self) -> int:
        return len(self.clouds)

    @property
    def frame_tags(self):
        return [tag for tag, _ in self.clouds]


def ring_push(buffer: RingBuffer, cloud: PointSet, frame: Optional[int] = None) -> RingBuffer:
    if len(cloud) == 0:
        raise ValueError("cannot push an empty cloud")
    last = buffer.clouds[-1][0] if buffer.clouds else -1
    tag = last + 1 if frame is None else int(frame)
    if tag <= last:
        raise ValueError("frame tags must be strictly increasing")
    buffer.clouds.append((tag, cloud))
    while len(buffer.clouds) > buffer.capacity:
        buffer.clouds.popleft()
    return buffer


def ring_assemble(buffer: RingBuffer) -> PointSet:
    if not buffer.clouds:
        raise ValueError("ring buffer is empty")
    return PointSet.concatenate(c for _, c in buffer.clouds)
