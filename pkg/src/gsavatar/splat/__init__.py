"""Differentiable tile-based 3D Gaussian splatting."""

from .core import (ALPHA_MAX, ALPHA_MIN, LOW_PASS, MAHA_MAX, NEAR_PLANE, T_MIN,
                   TILE, ScreenGaussian, build_covariance, project, rasterize,
                   rasterize_arrays, rasterize_backward,
                   rasterize_backward_arrays)
from .reference import rasterize_reference
from .render_op import render_gaussians
from .types import (Camera, Gaussians, RenderTarget, load_cameras,
                    save_cameras)

__all__ = [
    "ALPHA_MAX", "ALPHA_MIN", "Camera", "Gaussians", "LOW_PASS", "MAHA_MAX",
    "NEAR_PLANE", "RenderTarget", "ScreenGaussian", "T_MIN", "TILE",
    "build_covariance", "load_cameras", "project", "rasterize",
    "rasterize_arrays", "rasterize_backward", "rasterize_backward_arrays",
    "rasterize_reference", "render_gaussians", "save_cameras",
]
