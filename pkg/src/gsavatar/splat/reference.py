"""Brute-force per-pixel reference renderer.

Loops over every pixel and composites Eq.-style front-to-back blending
over all Gaussians in depth order, with no tiling and no vectorized
compositing tricks. Used as the oracle the tile renderer is checked
against; intentionally written independently of splat.core's tile path.
"""

from __future__ import annotations

import numpy as np

from .core import (ALPHA_MAX, ALPHA_MIN, LOW_PASS, MAHA_MAX, NEAR_PLANE,
                   T_MIN, build_covariance)
from .types import Camera, Gaussians, RenderTarget


def rasterize_reference(gaussians: Gaussians, cam: Camera) -> RenderTarget:
    n = len(gaussians)
    H, W = cam.height, cam.width
    rgb = np.zeros((H, W, 3))
    alpha_img = np.zeros((H, W))
    if n == 0:
        return RenderTarget(rgb.astype(np.float32), alpha_img.astype(np.float32))

    covs = build_covariance(gaussians.q, gaussians.s)
    R, t = cam.R, cam.t
    tv = gaussians.x.astype(np.float64) @ R.T + t
    depth = tv[:, 2]
    order = [i for i in np.argsort(depth, kind="stable") if depth[i] > NEAR_PLANE]

    mean2d = np.zeros((n, 2))
    minv = np.zeros((n, 2, 2))
    for i in order:
        x, y, z = tv[i]
        mean2d[i] = (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy)
        J = np.array([[cam.fx / z, 0.0, -cam.fx * x / z ** 2],
                      [0.0, cam.fy / z, -cam.fy * y / z ** 2]])
        c2 = J @ R @ covs[i] @ R.T @ J.T + LOW_PASS * np.eye(2)
        minv[i] = np.linalg.inv(c2)

    colors = gaussians.c.astype(np.float64)
    opac = gaussians.o.astype(np.float64)
    for py in range(H):
        for px in range(W):
            p = np.array([px + 0.5, py + 0.5])
            T = 1.0
            acc = np.zeros(3)
            for i in order:
                if T < T_MIN:
                    break
                d = p - mean2d[i]
                maha = d @ minv[i] @ d
                if maha > MAHA_MAX:
                    continue
                a = min(opac[i] * np.exp(-0.5 * maha), ALPHA_MAX)
                if a < ALPHA_MIN:
                    continue
                acc += colors[i] * (a * T)
                T *= 1.0 - a
            rgb[py, px] = acc
            alpha_img[py, px] = 1.0 - T
    return RenderTarget(rgb.astype(np.float32), alpha_img.astype(np.float32))
