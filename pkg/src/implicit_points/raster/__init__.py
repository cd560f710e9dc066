"""Differentiable point rasterization: bilinear and Gaussian splats."""
from .blend import ALPHA_MAX, GradientBuffers, blend_backward, blend_forward
from .gaussian import (ProjectedGaussian, gaussian_world_scale, gen_fragments_gaussian,
                       project_gaussian)
from .projection import Fragments, Projected, gen_fragments_bilinear, project_points
from .reference import render_reference
from .sorting import (SortStats, TileGrid, analytic_cost_model, mean_tiles_per_splat,
                      radix_argsort, sort_single64, sort_two_stage)
from .tiled import (GaussianConfig, RasterState, background_pixels, rasterize, render_backward,
                    render_tiled)

__all__ = [
    "ALPHA_MAX", "Fragments", "GaussianConfig", "GradientBuffers", "Projected",
    "ProjectedGaussian", "RasterState", "SortStats", "TileGrid", "analytic_cost_model",
    "background_pixels", "blend_backward", "blend_forward", "gaussian_world_scale",
    "gen_fragments_bilinear", "gen_fragments_gaussian", "mean_tiles_per_splat",
    "project_gaussian", "project_points", "radix_argsort", "rasterize", "render_backward",
    "render_reference", "render_tiled", "sort_single64", "sort_two_stage",
]
