"""Finite-difference validation of the rasterizer's analytic gradients.

Compositing is only piecewise smooth: depth sorting, the 3-sigma footprint
cutoff, the alpha clamp, and early termination all switch discretely. The
analytic backward pass differentiates the smooth blend for the forward
pass's fixed discrete structure, so the finite-difference oracle here
freezes that structure at the base scene (same order, same footprint and
clamp sets) and differences the resulting smooth function. Structure
discontinuities themselves carry no gradient by design.
"""

from __future__ import annotations

import numpy as np

from .core import (ALPHA_MAX, ALPHA_MIN, T_MIN, MAHA_MAX, _inverse_2x2,
                   _project_batch, build_covariance, rasterize_backward)
from .types import Camera, Gaussians


def _screen_quantities(x, q, s, cam):
    covs = build_covariance(q, s)
    proj = _project_batch(np.asarray(x, np.float64), covs, cam, np.float64)
    minv, _ = _inverse_2x2(proj["cov2d"])
    return proj, minv


def _pixel_grid(cam):
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]
    return np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)  # (P,2)


class FrozenStructure:
    """Discrete compositing structure captured at the base scene."""

    def __init__(self, scene: Gaussians, cam: Camera):
        proj, minv = _screen_quantities(scene.x, scene.q, scene.s, cam)
        depth = proj["depth"]
        cand = np.argsort(depth, kind="stable")
        self.order = cand[proj["valid"][cand]]
        px = _pixel_grid(cam)
        d = px[:, None, :] - proj["mean2d"][None, self.order, :]
        m = minv[self.order]
        maha = (m[None, :, 0, 0] * d[..., 0] ** 2
                + 2 * m[None, :, 0, 1] * d[..., 0] * d[..., 1]
                + m[None, :, 1, 1] * d[..., 1] ** 2)
        gval = np.exp(-0.5 * maha)
        alpha = np.minimum(scene.o[None, self.order] * gval, ALPHA_MAX)
        self.clamped = scene.o[None, self.order] * gval >= ALPHA_MAX
        self.include = (maha <= MAHA_MAX) & (alpha >= ALPHA_MIN)
        a_eff = np.where(self.include, alpha, 0.0)
        one_m = 1.0 - a_eff
        tp = np.cumprod(one_m, axis=1) / one_m
        tp[:, 0] = 1.0
        self.active = tp >= T_MIN
        self.cam = cam

    def value(self, x, q, s, o, c, upstream) -> float:
        """Composite with perturbed attributes on the frozen structure."""
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        proj, minv = _screen_quantities(x, qn, s, self.cam)
        px = _pixel_grid(self.cam)
        d = px[:, None, :] - proj["mean2d"][None, self.order, :]
        m = minv[self.order]
        maha = (m[None, :, 0, 0] * d[..., 0] ** 2
                + 2 * m[None, :, 0, 1] * d[..., 0] * d[..., 1]
                + m[None, :, 1, 1] * d[..., 1] ** 2)
        alpha = o[None, self.order] * np.exp(-0.5 * maha)
        alpha = np.where(self.clamped, ALPHA_MAX, alpha)
        alpha = np.where(self.include, alpha, 0.0)
        one_m = 1.0 - alpha
        tp = np.cumprod(one_m, axis=1) / one_m
        tp[:, 0] = 1.0
        w = alpha * tp * self.active
        rgb = w @ c[self.order]
        return float((rgb.reshape(self.cam.height, self.cam.width, 3)
                      * upstream).sum())


def check_rasterizer_gradients(scene: Gaussians, cam: Camera, seed: int = 0,
                               eps: float = 1e-4, atol: float = 1e-3) -> float:
    """Max relative error of analytic vs frozen-structure FD gradients."""
    rng = np.random.default_rng(seed)
    upstream = rng.uniform(-1.0, 1.0, (cam.height, cam.width, 3))
    frozen = FrozenStructure(scene, cam)
    analytic = rasterize_backward(scene, cam, upstream, dtype=np.float64,
                                  order=frozen.order)

    arrays = {"x": scene.x.astype(np.float64), "q": scene.q.astype(np.float64),
              "s": scene.s.astype(np.float64), "o": scene.o.astype(np.float64),
              "c": scene.c.astype(np.float64)}
    max_rel = 0.0
    for name in arrays:
        flat = arrays[name].reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = frozen.value(**arrays, upstream=upstream)
            flat[i] = orig - eps
            fm = frozen.value(**arrays, upstream=upstream)
            flat[i] = orig
            fd[i] = (fp - fm) / (2 * eps)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), atol)
        max_rel = max(max_rel, float((np.abs(a - fd) / denom).max()))
    return max_rel
