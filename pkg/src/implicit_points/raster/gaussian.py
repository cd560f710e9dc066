"""Points as small isotropic Gaussians (inference only).

The world-space scale is chosen so a Gaussian on the near plane at the
image center has a five pixel standard deviation. Each Gaussian is
projected with the local affine approximation of the pinhole projection,
dilated by a fixed screen-space variance and truncated at three sigma.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import CameraView
from .projection import Fragments, Projected

DEFAULT_DILATION = 0.16
REFERENCE_3DGS_DILATION = 0.3
DEFAULT_NEAR_PIXEL_STD = 5.0
TRUNCATION_SIGMAS = 3.0
# squared Mahalanobis cutoff; the slack keeps the exact 3-sigma ring inside
_CUTOFF = TRUNCATION_SIGMAS ** 2 * (1 + 1e-12)


def gaussian_world_scale(camera: CameraView, near_pixel_std: float = DEFAULT_NEAR_PIXEL_STD) -> float:
    return near_pixel_std * camera.z_near / max(camera.fx, camera.fy)


@dataclass(frozen=True)
class ProjectedGaussian:
    mean: np.ndarray    # (M, 2) pixels
    cov: np.ndarray     # (M, 2, 2) pixels^2
    conic: np.ndarray   # (M, 3) inverse covariance (a, b, c) for [[a, b], [b, c]]
    radius: np.ndarray  # (M,) 3 * sqrt(largest eigenvalue)
    depth: np.ndarray   # (M,)
    index: np.ndarray   # (M,) original point index

    def __len__(self) -> int:
        return len(self.depth)


def projection_jacobian(cam: np.ndarray, camera: CameraView) -> np.ndarray:
    """(M, 2, 3) Jacobian of the pinhole projection at camera-space points."""
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    J = np.zeros((len(cam), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * x / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * y / (z * z)
    return J


def project_gaussian(proj: Projected, scale: float, camera: CameraView,
                     dilation: float = DEFAULT_DILATION) -> ProjectedGaussian:
    """Screen-space covariance ``s^2 J J^T + dilation * I`` for each point.

    The world rotation drops out because the 3D covariance is isotropic.
    """
    if np.any(proj.depth <= camera.z_near):
        raise ValueError("Gaussian centers must lie beyond the near plane")
    J = projection_jacobian(proj.cam, camera)
    cov = scale * scale * np.einsum("nij,nkj->nik", J, J)
    cov[:, 0, 0] += dilation
    cov[:, 1, 1] += dilation
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    if np.any(~(det > 0)) or np.any(~(a > 0)):
        raise ValueError("projected covariance is not positive definite")
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    return ProjectedGaussian(proj.xy.copy(), cov, conic, TRUNCATION_SIGMAS * np.sqrt(lam_max),
                             proj.depth.copy(), proj.index.copy())


def pixel_bbox_gaussian(g: ProjectedGaussian, width: int, height: int):
    """Inclusive bounds of pixels whose centers can lie within the radius, clipped."""
    x0 = np.ceil(g.mean[:, 0] - g.radius - 0.5).astype(np.int64)
    x1 = np.floor(g.mean[:, 0] + g.radius - 0.5).astype(np.int64)
    y0 = np.ceil(g.mean[:, 1] - g.radius - 0.5).astype(np.int64)
    y1 = np.floor(g.mean[:, 1] + g.radius - 0.5).astype(np.int64)
    return (np.maximum(x0, 0), np.maximum(y0, 0),
            np.minimum(x1, width - 1), np.minimum(y1, height - 1))


def mahalanobis_sq(dx, dy, conic):
    a, b, c = conic[..., 0], conic[..., 1], conic[..., 2]
    return dx * dx * a + 2.0 * dx * dy * b + dy * dy * c


def footprint(g: ProjectedGaussian, rows: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Weights of Gaussians ``rows`` at pixel centers (px, py) and the in-footprint mask."""
    dx = px + 0.5 - g.mean[rows, 0]
    dy = py + 0.5 - g.mean[rows, 1]
    m = mahalanobis_sq(dx, dy, g.conic[rows])
    return np.exp(-0.5 * m), m <= _CUTOFF


def expand_boxes(x0, y0, x1, y1):
    """Enumerate all pixels of inclusive boxes; returns (owner, px, py)."""
    wx = np.maximum(x1 - x0 + 1, 0)
    wy = np.maximum(y1 - y0 + 1, 0)
    n = wx * wy
    owner = np.repeat(np.arange(len(n)), n)
    start = np.concatenate([[0], np.cumsum(n)[:-1]])
    local = np.arange(int(n.sum())) - start[owner]
    px = x0[owner] + local % np.maximum(wx[owner], 1)
    py = y0[owner] + local // np.maximum(wx[owner], 1)
    return owner, px, py


def gen_fragments_gaussian(g: ProjectedGaussian, depth_keys: np.ndarray,
                           width: int, height: int) -> Fragments:
    """Fragments for every pixel center within three sigma of each Gaussian."""
    x0, y0, x1, y1 = pixel_bbox_gaussian(g, width, height)
    owner, px, py = expand_boxes(x0, y0, x1, y1)
    w, inside = footprint(g, owner, px, py)
    owner, px, py, w = owner[inside], px[inside], py[inside], w[inside]
    return Fragments(py * width + px, depth_keys[owner], owner, w)
