"""Tiled rendering pipeline and the per-pixel 64-bit baseline.

Tiles are processed in fixed chunks. Chunk boundaries do not depend on the
worker count and partial gradients are merged in chunk order, so results
are bitwise identical for any number of threads.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..scene import NUM_CHANNELS, CameraView, FeatureImage, PointSet, world_pixel_directions
from . import gaussian as gs
from .blend import (GradientBuffers, blend_forward, blend_runs, blend_runs_backward,
                    chain_to_points, find_runs, fragment_alpha, point_features,
                    scatter_point_grads)
from .projection import (Fragments, Projected, bilinear_corners, empty_fragments,
                         gen_fragments_bilinear, pixel_bbox_bilinear, project_points)
from .sorting import SortStats, TileCopies, TileGrid, sort_single64, sort_two_stage

CHUNK_TILES = 256
MODES = ("bilinear", "gaussian")
SORTS = ("two-stage", "single64")


@dataclass(frozen=True)
class GaussianConfig:
    dilation: float = gs.DEFAULT_DILATION
    near_pixel_std: float = gs.DEFAULT_NEAR_PIXEL_STD
    scale: Optional[float] = None  # world-space std; derived from the camera when None

    def world_scale(self, camera: CameraView) -> float:
        if self.scale is not None:
            return self.scale
        return gs.gaussian_world_scale(camera, self.near_pixel_std)


def background_pixels(camera: CameraView, background=None) -> np.ndarray:
    """Per-pixel background features (H, W, 4).

    ``background`` may be None (zeros), a 4-vector, an (H, W, 4) array, or
    a callable mapping world directions (..., 3) to features (..., 4).
    """
    H, W = camera.height, camera.width
    if background is None:
        return np.zeros((H, W, NUM_CHANNELS))
    if callable(background):
        return np.asarray(background(world_pixel_directions(camera)), dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    if bg.shape == (NUM_CHANNELS,):
        return np.broadcast_to(bg, (H, W, NUM_CHANNELS)).copy()
    if bg.shape != (H, W, NUM_CHANNELS):
        raise ValueError(f"background must be a 4-vector or ({H}, {W}, 4), got {bg.shape}")
    return bg


@dataclass
class RasterState:
    """Everything a backward pass or a debug dump needs from a forward render."""

    camera: CameraView
    mode: str
    sort: str
    proj: Projected
    frags: Fragments          # run layout, chunk by chunk
    chunks: list              # (fragment start, fragment stop) per chunk
    background: np.ndarray    # (H*W, 4)
    image: FeatureImage
    stats: SortStats
    copies: Optional[TileCopies] = None


def _footprints(proj: Projected, camera: CameraView, mode: str, gcfg: GaussianConfig):
    W, H = camera.width, camera.height
    if mode == "bilinear":
        return None, pixel_bbox_bilinear(proj, W, H)
    if mode == "gaussian":
        g = gs.project_gaussian(proj, gcfg.world_scale(camera), camera, gcfg.dilation)
        return g, gs.pixel_bbox_gaussian(g, W, H)
    raise ValueError(f"unknown splat mode {mode!r}; expected one of {MODES}")


def _tile_fragments(copies: TileCopies, lo: int, hi: int, proj: Projected, g, grid: TileGrid,
                    mode: str, corners) -> Fragments:
    """Fragments of copies ``lo:hi`` restricted to their tiles, in run layout."""
    tile = copies.tile[lo:hi].astype(np.int64)
    rows = copies.point[lo:hi]
    t = grid.tile
    tx0 = (tile % grid.tiles_x) * t
    ty0 = (tile // grid.tiles_x) * t
    W, H = grid.width, grid.height
    if mode == "bilinear":
        px, py, w = corners
        cpx, cpy, cw = px[rows], py[rows], w[rows]
        inside = ((cpx >= tx0[:, None]) & (cpx < tx0[:, None] + t)
                  & (cpy >= ty0[:, None]) & (cpy < ty0[:, None] + t)
                  & (cpx < W) & (cpy < H) & (cpx >= 0) & (cpy >= 0))
        owner = np.repeat(rows, 4).reshape(-1, 4)[inside]
        fpx, fpy, fw = cpx[inside], cpy[inside], cw[inside]
    else:
        bx0, by0, bx1, by1 = gs.pixel_bbox_gaussian(g, W, H)
        x0 = np.maximum(bx0[rows], tx0)
        y0 = np.maximum(by0[rows], ty0)
        x1 = np.minimum(bx1[rows], tx0 + t - 1)
        y1 = np.minimum(by1[rows], ty0 + t - 1)
        k, fpx, fpy = gs.expand_boxes(x0, y0, x1, y1)
        owner = rows[k]
        fw, keep = gs.footprint(g, owner, fpx, fpy)
        owner, fpx, fpy, fw = owner[keep], fpx[keep], fpy[keep], fw[keep]
    pixel = fpy * W + fpx
    order = np.argsort(pixel, kind="stable")
    return Fragments(pixel[order], proj.depth_key[owner[order]], owner[order], fw[order])


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def rasterize(points: PointSet, camera: CameraView, background=None, mode: str = "bilinear",
              sort: str = "two-stage", workers: int = 1,
              gaussian: Optional[GaussianConfig] = None, debug: bool = False) -> RasterState:
    """Forward render; returns the image together with the state for backward."""
    gcfg = gaussian or GaussianConfig()
    W, H = camera.width, camera.height
    bg = background_pixels(camera, background).reshape(H * W, NUM_CHANNELS)
    proj = project_points(points, camera)
    g, bbox = _footprints(proj, camera, mode, gcfg)
    feat_rows = point_features(points, proj)
    opa_rows = points.opacities[proj.index]

    if sort == "single64":
        if mode == "bilinear":
            frags = gen_fragments_bilinear(proj, W, H)
        else:
            frags = gs.gen_fragments_gaussian(g, proj.depth_key, W, H)
        frags, stats = sort_single64(frags, W, H)
        img, trans = blend_forward(frags, proj, points, bg, W, H, debug=debug)
        return RasterState(camera, mode, sort, proj, frags, [(0, len(frags))], bg,
                           FeatureImage(img, trans), stats)
    if sort != "two-stage":
        raise ValueError(f"unknown sort mode {sort!r}; expected one of {SORTS}")

    grid = TileGrid(W, H)
    copies, stats = sort_two_stage(proj.depth_key, bbox, grid)
    corners = bilinear_corners(proj.xy) if mode == "bilinear" else None
    bounds = list(range(0, grid.count, CHUNK_TILES)) + [grid.count]
    spans = [(copies.starts[a], copies.starts[b]) for a, b in zip(bounds[:-1], bounds[1:])]

    def forward_chunk(span):
        frags = _tile_fragments(copies, span[0], span[1], proj, g, grid, mode, corners)
        runs = find_runs(frags.pixel, check=debug, depth_key=frags.depth_key)
        alpha = fragment_alpha(frags, opa_rows)
        out = blend_runs(runs, alpha, feat_rows[frags.point], bg[runs.pixel])
        return frags, out

    results = _map(forward_chunk, spans, workers)
    img = bg.copy()
    trans = np.ones(H * W)
    chunks = []
    pos = 0
    for frags, out in results:
        img[out.pixel] = out.color
        trans[out.pixel] = out.t_end
        chunks.append((pos, pos + len(frags)))
        pos += len(frags)
    all_frags = Fragments.concatenate([f for f, _ in results]) if results else empty_fragments()
    image = FeatureImage(img.reshape(H, W, NUM_CHANNELS), trans.reshape(H, W))
    return RasterState(camera, mode, sort, proj, all_frags, chunks, bg, image, stats, copies)


def render_tiled(points: PointSet, camera: CameraView, background=None, mode: str = "bilinear",
                 workers: int = 1, gaussian: Optional[GaussianConfig] = None) -> FeatureImage:
    return rasterize(points, camera, background, mode, "two-stage", workers, gaussian).image


def render_backward(state: RasterState, points: PointSet, grad_image: np.ndarray,
                    workers: int = 1, skip_zero_alpha: bool = False) -> GradientBuffers:
    """Opacity and SH gradients of ``sum(grad_image * image)`` for a bilinear render."""
    if state.mode != "bilinear":
        raise ValueError("only bilinear splatting is differentiable")
    cam = state.camera
    H, W = cam.height, cam.width
    g = np.asarray(grad_image, dtype=np.float64)
    if g.shape != (H, W, NUM_CHANNELS):
        raise ValueError(f"upstream gradient must be ({H}, {W}, 4), got {g.shape}")
    g = g.reshape(-1, NUM_CHANNELS)
    proj = state.proj
    feat_rows = point_features(points, proj)
    opa_rows = points.opacities[proj.index]

    def backward_chunk(span):
        frags = state.frags.take(np.arange(span[0], span[1]))
        runs = find_runs(frags.pixel)
        alpha = fragment_alpha(frags, opa_rows)
        feat = feat_rows[frags.point]
        bgr = state.background[runs.pixel]
        out = blend_runs(runs, alpha, feat, bgr)
        d_alpha, d_feat = blend_runs_backward(runs, alpha, feat, bgr, out.t_frag, out.t_end,
                                              g[runs.pixel], skip_zero_alpha)
        d_o, d_f = chain_to_points(points, proj, frags, d_alpha, d_feat)
        return d_alpha, d_o, d_f

    parts = _map(backward_chunk, state.chunks, workers)
    d_o = np.zeros(len(proj))
    d_f = np.zeros((len(proj), NUM_CHANNELS))
    for _, po, pf in parts:  # fixed merge order
        d_o += po
        d_f += pf
    d_alpha = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    grads = scatter_point_grads(points, proj, d_o, d_f)
    return GradientBuffers(grads.d_opacity, grads.d_sh, d_alpha)
