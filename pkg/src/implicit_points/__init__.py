"""Deterministic CPU core for rendering sampled implicit point clouds."""
from .kernels import add_weight_decay_grad, cauchy_loss, contract
from .scene import AppearanceOracle, CameraView, FeatureImage, PointSet, ProbabilityField
from .tonemap import ResponseCurve, project_curve, tonemap_forward, tonemap_inverse

__version__ = "0.1.0"

__all__ = [
    "AppearanceOracle", "CameraView", "FeatureImage", "PointSet", "ProbabilityField",
    "ResponseCurve", "add_weight_decay_grad", "cauchy_loss", "contract", "project_curve",
    "tonemap_forward", "tonemap_inverse",
]
