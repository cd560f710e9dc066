"""Sort-cost benchmark on synthetic 1080p-scale fragment loads."""
from __future__ import annotations

import os
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .raster.projection import Projected, gen_fragments_bilinear, pixel_bbox_bilinear
from .raster.sorting import (ACCOUNTED_TILES_PER_SPLAT, TileGrid, analytic_cost_model,
                             mean_tiles_per_splat, sort_single64, sort_two_stage)


@dataclass
class CostReport:
    points: int
    width: int
    height: int
    baseline_keys: int
    baseline_pass_keys: int
    baseline_key_bytes: int
    two_stage_keys: tuple
    two_stage_pass_keys: int
    two_stage_key_bytes: int
    tiles_per_splat: float
    analytic: dict

    @property
    def baseline_cost_per_point(self) -> float:
        return self.baseline_pass_keys / self.points

    @property
    def two_stage_cost_per_point(self) -> float:
        return self.two_stage_pass_keys / self.points

    @property
    def cost_ratio(self) -> float:
        return self.baseline_pass_keys / self.two_stage_pass_keys

    @property
    def key_memory_ratio(self) -> float:
        # one 64-bit key per point before; 32-bit depth keys plus 16-bit tile keys after
        return self.two_stage_key_bytes / (8 * self.points)

    def rows(self):
        a = self.analytic
        return [
            ("baseline pass-keys per point", self.baseline_cost_per_point, a["baseline_cost_per_point"]),
            ("two-stage pass-keys per point", self.two_stage_cost_per_point, a["two_stage_cost_per_point"]),
            ("cost ratio baseline/two-stage", self.cost_ratio, a["cost_ratio"]),
            ("tiles per 2x2 splat", self.tiles_per_splat, ACCOUNTED_TILES_PER_SPLAT),
            ("key memory ratio", self.key_memory_ratio, a["key_memory_ratio"]),
            ("key memory reduction", 1 - self.key_memory_ratio, a["key_memory_reduction"]),
        ]

    def to_csv(self) -> str:
        lines = ["metric,measured,accounting"]
        lines += [f"{name},{m:.6f},{p:.6f}" for name, m, p in self.rows()]
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        lines = [f"Sort cost, {self.points} points at {self.width}x{self.height}", "",
                 "| metric | measured | accounting |", "|---|---|---|"]
        lines += [f"| {name} | {m:.4f} | {p:.4f} |" for name, m, p in self.rows()]
        return "\n".join(lines) + "\n"


def synthetic_load(n: int, width: int, height: int, seed: int) -> Projected:
    """Points uniformly covering the image with random depths, all inside."""
    rng = np.random.default_rng(seed)
    xy = np.stack([rng.uniform(0.5, width - 0.5, n), rng.uniform(0.5, height - 0.5, n)], axis=1)
    depth = rng.uniform(0.5, 50.0, n)
    cam = np.column_stack([np.zeros((n, 2)), depth])
    dirs = np.tile([0.0, 0.0, 1.0], (n, 1))
    return Projected(np.arange(n), xy, depth, cam, dirs)


def cost_report(n: int = 1 << 18, width: int = 1920, height: int = 1080, seed: int = 0) -> CostReport:
    proj = synthetic_load(n, width, height, seed)
    frags = gen_fragments_bilinear(proj, width, height)
    _, s64 = sort_single64(frags, width, height)
    _, s2 = sort_two_stage(proj.depth_key, pixel_bbox_bilinear(proj, width, height),
                           TileGrid(width, height))
    return CostReport(n, width, height, s64.keys[0], s64.pass_key_product, s64.key_bytes,
                      s2.keys, s2.pass_key_product, s2.key_bytes, s2.keys[1] / n,
                      analytic_cost_model(width, height))


def time_sorts(n: int, width: int, height: int, seed: int = 0, repeats: int = 5) -> dict:
    """Median wall time of each pipeline's sort over ``repeats`` warm runs."""
    proj = synthetic_load(n, width, height, seed)
    frags = gen_fragments_bilinear(proj, width, height)
    bbox = pixel_bbox_bilinear(proj, width, height)
    grid = TileGrid(width, height)
    sort_single64(frags, width, height)
    sort_two_stage(proj.depth_key, bbox, grid)
    t64, t2 = [], []
    for _ in range(repeats):
        t = time.perf_counter()
        sort_single64(frags, width, height)
        t64.append(time.perf_counter() - t)
        t = time.perf_counter()
        sort_two_stage(proj.depth_key, bbox, grid)
        t2.append(time.perf_counter() - t)
    return {"single64_s": statistics.median(t64), "two_stage_s": statistics.median(t2),
            "threads": 1, "max_threads": os.cpu_count() or 1}


def tiles_per_splat_mc(n: int = 1_000_000, seed: int = 0) -> float:
    return mean_tiles_per_splat(n, seed)
