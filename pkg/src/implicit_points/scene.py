"""Domain types shared by the sampler, rasterizers and I/O.

Everything here is immutable after construction. Arrays are copied and
flagged read-only so instances can be shared across threads.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

# Real SH basis constants up to degree two.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, 0.31539156525252005, 0.5462742152960396)

NUM_SH = 9
NUM_CHANNELS = 4


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


# --------------------------------------------------------------------------
# Morton keys
# --------------------------------------------------------------------------

def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_encode(ijk: np.ndarray) -> np.ndarray:
    """Interleave three 21-bit integer coordinates into a 64-bit key."""
    ijk = np.asarray(ijk)
    if ijk.ndim == 1:
        ijk = ijk[None]
    if np.any(ijk < 0) or np.any(ijk >= (1 << 21)):
        raise ValueError("voxel index outside the 21-bit Morton range")
    return (_spread_bits(ijk[:, 0])
            | (_spread_bits(ijk[:, 1]) << np.uint64(1))
            | (_spread_bits(ijk[:, 2]) << np.uint64(2)))


def hash32(keys: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer folded to 32 bits."""
    z = np.asarray(keys, dtype=np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z & np.uint64(0xFFFFFFFF)).astype(np.uint32)


# --------------------------------------------------------------------------
# Probability field
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbabilityField:
    """Sparse cubic-voxel grid with per-voxel sampling weights.

    ``indices`` are integer lattice coordinates at ``resolution`` cells per
    axis over the cube ``[bounds_min, bounds_max]``. Voxels are stored in
    ascending Morton order; that order is the canonical voxel id order.
    """

    resolution: int
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        lo = np.asarray(self.bounds_min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.bounds_max, dtype=np.float64).reshape(3)
        if self.resolution < 1:
            raise ValueError("resolution must be >= 1")
        if len(idx) != len(w):
            raise ValueError("indices and weights differ in length")
        if len(w) == 0:
            raise ValueError("probability field has no voxels")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("voxel weights must be finite and non-negative")
        if not np.any(w > 0):
            raise ValueError("at least one voxel weight must be positive")
        if np.any(idx < 0) or np.any(idx >= self.resolution):
            raise ValueError("voxel index outside the lattice")
        extent = hi - lo
        if np.any(extent <= 0) or not np.allclose(extent, extent[0], rtol=1e-12, atol=0):
            raise ValueError("bounds must describe a non-degenerate cube")
        ids = morton_encode(idx)
        order = np.argsort(ids, kind="stable")
        ids = ids[order]
        if np.any(ids[1:] == ids[:-1]):
            raise ValueError("duplicate voxel indices")
        object.__setattr__(self, "indices", _frozen(idx[order], np.int64))
        object.__setattr__(self, "weights", _frozen(w[order]))
        object.__setattr__(self, "bounds_min", _frozen(lo))
        object.__setattr__(self, "bounds_max", _frozen(hi))
        object.__setattr__(self, "_ids", _frozen(ids, np.uint64))

    @property
    def voxel_ids(self) -> np.ndarray:
        return self._ids

    @property
    def voxel_size(self) -> float:
        return float((self.bounds_max[0] - self.bounds_min[0]) / self.resolution)

    @property
    def sizes(self) -> np.ndarray:
        return np.full(len(self.weights), self.voxel_size)

    @property
    def origins(self) -> np.ndarray:
        """Minimum corner of every voxel."""
        return self.bounds_min + self.indices * self.voxel_size

    @property
    def centers(self) -> np.ndarray:
        return self.origins + 0.5 * self.voxel_size

    def __len__(self) -> int:
        return len(self.weights)

    def __eq__(self, other):
        if not isinstance(other, ProbabilityField):
            return NotImplemented
        return (self.resolution == other.resolution
                and np.array_equal(self.bounds_min, other.bounds_min)
                and np.array_equal(self.bounds_max, other.bounds_max)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None


# --------------------------------------------------------------------------
# Point sets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PointSet:
    positions: np.ndarray
    opacities: np.ndarray
    sh_coeffs: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        opa = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        sh = np.asarray(self.sh_coeffs, dtype=np.float64).reshape(-1, NUM_CHANNELS, NUM_SH)
        if not (len(pos) == len(opa) == len(sh)):
            raise ValueError("point arrays differ in length")
        if not np.all(np.isfinite(pos)):
            raise ValueError("point positions must be finite")
        if np.any(~(opa >= 0.0) | ~(opa <= 1.0)):
            raise ValueError("opacities must lie in [0, 1]")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "opacities", _frozen(opa))
        object.__setattr__(self, "sh_coeffs", _frozen(sh))

    @classmethod
    def empty(cls) -> "PointSet":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros((0, NUM_CHANNELS, NUM_SH)))

    @classmethod
    def concatenate(cls, clouds) -> "PointSet":
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        return cls(np.concatenate([c.positions for c in clouds]),
                   np.concatenate([c.opacities for c in clouds]),
                   np.concatenate([c.sh_coeffs for c in clouds]))

    def replace(self, opacities=None, sh_coeffs=None) -> "PointSet":
        return PointSet(self.positions,
                        self.opacities if opacities is None else opacities,
                        self.sh_coeffs if sh_coeffs is None else sh_coeffs)

    def __len__(self) -> int:
        return len(self.opacities)

    def __eq__(self, other):
        if not isinstance(other, PointSet):
            return NotImplemented
        return (np.array_equal(self.positions, other.positions)
                and np.array_equal(self.opacities, other.opacities)
                and np.array_equal(self.sh_coeffs, other.sh_coeffs))

    __hash__ = None


# --------------------------------------------------------------------------
# Cameras
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraView:
    """Pinhole camera, OpenCV axes (x right, y down, z forward).

    ``rotation``/``translation`` map world to camera: ``x_c = R x_w + t``.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    z_near: float = 0.01
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not self.z_near > 0:
            raise ValueError("z_near must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError("image size must be at least 1x1")
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        for name in ("fx", "fy", "cx", "cy", "z_near", "k1", "k2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "rotation", _frozen(R))
        object.__setattr__(self, "translation", _frozen(np.reshape(self.translation, 3)))

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0), **intrinsics) -> "CameraView":
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        # camera y points down, so "up" in the image is -y
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-12:
            right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        return cls(rotation=R, translation=-R @ eye, **intrinsics)

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def intrinsics_key(self) -> Tuple:
        return (self.fx, self.fy, self.cx, self.cy, self.width, self.height, self.k1, self.k2)

    @property
    def has_distortion(self) -> bool:
        return self.k1 != 0.0 or self.k2 != 0.0

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def distort(self, xn: np.ndarray, yn: np.ndarray):
        if not self.has_distortion:
            return xn, yn
        r2 = xn * xn + yn * yn
        s = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
        return xn * s, yn * s

    def undistort(self, xd: np.ndarray, yd: np.ndarray, iterations: int = 50):
        if not self.has_distortion:
            return xd, yd
        xu, yu = xd.copy(), yd.copy()
        for _ in range(iterations):
            r2 = xu * xu + yu * yu
            s = 1.0 + self.k1 * r2 + self.k2 * r2 * r2
            xu, yu = xd / s, yd / s
        return xu, yu

    def as_array(self) -> np.ndarray:
        """Flat float64 record used by the scene container."""
        return np.concatenate([
            [self.fx, self.fy, self.cx, self.cy, self.width, self.height,
             self.z_near, self.k1, self.k2],
            self.rotation.reshape(-1), self.translation])

    @classmethod
    def from_array(cls, a) -> "CameraView":
        a = np.asarray(a, dtype=np.float64)
        return cls(fx=a[0], fy=a[1], cx=a[2], cy=a[3], width=int(a[4]), height=int(a[5]),
                   z_near=a[6], k1=a[7], k2=a[8], rotation=a[9:18].reshape(3, 3),
                   translation=a[18:21])

    def __eq__(self, other):
        if not isinstance(other, CameraView):
            return NotImplemented
        return np.array_equal(self.as_array(), other.as_array())

    __hash__ = None


CAMERA_RECORD_LEN = 21


# --------------------------------------------------------------------------
# Feature images
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureImage:
    features: np.ndarray       # (H, W, 4)
    transmittance: np.ndarray  # (H, W) residual T_{K+1}

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        t = np.asarray(self.transmittance, dtype=np.float64)
        if f.ndim != 3 or f.shape[2] != NUM_CHANNELS or t.shape != f.shape[:2]:
            raise ValueError("feature image must be HxWx4 with HxW transmittance")
        if not np.all(np.isfinite(f)):
            raise ValueError("features must be finite")
        if np.any(t < 0) or np.any(t > 1):
            raise ValueError("transmittance must lie in [0, 1]")
        object.__setattr__(self, "features", _frozen(f))
        object.__setattr__(self, "transmittance", _frozen(t))

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]


# --------------------------------------------------------------------------
# Spherical harmonics
# --------------------------------------------------------------------------

def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Real SH basis up to degree two for unit directions, shape (..., 9)."""
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([
        np.full_like(x, SH_C0),
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[0] * y * z,
        SH_C2[1] * (3.0 * z * z - 1.0),
        SH_C2[0] * x * z,
        SH_C2[2] * (x * x - y * y),
    ], axis=-1)


def _normalize(dirs: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(dirs, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero-length direction")
    return dirs / n


def eval_sh_degree2(coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Evaluate 4x9 SH coefficient blocks along view directions.

    Broadcasts: ``coeffs`` (..., 4, 9) with ``dirs`` (..., 3) gives (..., 4).
    Directions that are not unit length are normalized first.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if np.isnan(coeffs).any():
        raise ValueError("NaN in SH coefficients")
    dirs = np.asarray(dirs, dtype=np.float64)
    norms = np.linalg.norm(dirs, axis=-1, keepdims=True)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        dirs = _normalize(dirs)
    basis = sh_basis(dirs)
    out = coeffs[..., 0] * basis[..., None, 0]
    for j in range(1, NUM_SH):
        out = out + coeffs[..., j] * basis[..., None, j]
    return out


# --------------------------------------------------------------------------
# Appearance oracle
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AppearanceOracle:
    """Procedural stand-in for a trained appearance field.

    Opacity and every SH coefficient are sums of a few seeded sinusoids of
    the contracted position, so neighbouring points look alike.
    """

    seed: int
    n_terms: int = 6

    def __post_init__(self):
        rng = np.random.default_rng([0xA11CE, int(self.seed)])
        T = self.n_terms
        freq = rng.normal(size=(T, 3)) * 2.5
        phase = rng.uniform(0, 2 * np.pi, size=T)
        amp = rng.uniform(0.5, 1.0, size=T)
        amp /= amp.sum()
        sh_freq = rng.normal(size=(T, 3)) * 2.0
        sh_phase = rng.uniform(0, 2 * np.pi, size=(NUM_CHANNELS, NUM_SH, T))
        sh_amp = rng.uniform(0.2, 1.0, size=(NUM_CHANNELS, NUM_SH, T))
        scale = np.array([0.6, 0.25, 0.25, 0.25, 0.1, 0.1, 0.1, 0.1, 0.1])
        sh_amp *= scale[None, :, None] / T
        dc = rng.uniform(0.8, 1.6, size=NUM_CHANNELS)
        for k, v in dict(_freq=freq, _phase=phase, _amp=amp, _sh_freq=sh_freq,
                         _sh_phase=sh_phase, _sh_amp=sh_amp, _dc=dc).items():
            object.__setattr__(self, k, _frozen(v))

    def query(self, positions: np.ndarray):
        """Return ``(opacities (N,), sh_coeffs (N, 4, 9))`` for contracted positions."""
        x = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if np.any(np.linalg.norm(x, axis=1) > 2.0 + 1e-6):
            raise ValueError("position outside the contraction ball (norm > 2)")
        s = np.zeros(len(x))
        for t in range(self.n_terms):
            w = self._freq[t]
            s = s + self._amp[t] * np.sin(x[:, 0] * w[0] + x[:, 1] * w[1] + x[:, 2] * w[2]
                                          + self._phase[t])
        opacity = 1.0 / (1.0 + np.exp(-6.0 * s))
        sh = np.zeros((len(x), NUM_CHANNELS, NUM_SH))
        for t in range(self.n_terms):
            w = self._sh_freq[t]
            arg = x[:, 0] * w[0] + x[:, 1] * w[1] + x[:, 2] * w[2]
            sh = sh + self._sh_amp[None, :, :, t] * np.sin(arg[:, None, None]
                                                           + self._sh_phase[None, :, :, t])
        sh[:, :, 0] += self._dc
        return opacity, sh


def query_appearance(oracle: AppearanceOracle, positions: np.ndarray):
    return oracle.query(positions)


# --------------------------------------------------------------------------
# Cached pixel directions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionGrid:
    width: int
    height: int
    key: Tuple
    directions: np.ndarray  # (H, W, 3) unit vectors in the camera frame


class DirectionCache:
    """Per-intrinsics cache of pixel-center ray directions.

    Lookups are lock-free reads of a dict; inserts serialize on a lock.
    """

    def __init__(self):
        self._grids = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def lookup(self, camera: CameraView) -> Tuple[DirectionGrid, bool]:
        key = camera.intrinsics_key
        grid = self._grids.get(key)
        if grid is not None:
            self.hits += 1
            return grid, True
        with self._lock:
            grid = self._grids.get(key)
            if grid is None:
                grid = _compute_directions(camera)
                self._grids[key] = grid
                self.misses += 1
                return grid, False
        self.hits += 1
        return grid, True

    def clear(self):
        with self._lock:
            self._grids.clear()
            self.hits = self.misses = 0


def _compute_directions(camera: CameraView) -> DirectionGrid:
    u = np.arange(camera.width, dtype=np.float64) + 0.5
    v = np.arange(camera.height, dtype=np.float64) + 0.5
    uu, vv = np.meshgrid(u, v)
    xd = (uu - camera.cx) / camera.fx
    yd = (vv - camera.cy) / camera.fy
    xn, yn = camera.undistort(xd, yd)
    d = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return DirectionGrid(camera.width, camera.height, camera.intrinsics_key, _frozen(d))


default_direction_cache = DirectionCache()


def pixel_ray_directions(camera: CameraView,
                         cache: Optional[DirectionCache] = None) -> DirectionGrid:
    """Unit camera-frame directions through every pixel center (cached)."""
    cache = default_direction_cache if cache is None else cache
    return cache.lookup(camera)[0]


def world_pixel_directions(camera: CameraView,
                           cache: Optional[DirectionCache] = None) -> np.ndarray:
    """Pixel directions rotated into world space, shape (H, W, 3)."""
    d = pixel_ray_directions(camera, cache).directions
    return d @ camera.rotation
