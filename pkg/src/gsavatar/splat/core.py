"""Tile-based forward/backward rasterization of 3D Gaussians.

Compositing follows front-to-back alpha blending over a single global
depth order (stable sort by view-space mean depth, ties by input index).
The screen footprint of a Gaussian is its 3-sigma ellipse; blending stops
once transmittance drops below T_MIN. Backward returns analytic gradients
for positions, covariances, opacities, and colors under the forward
pass's (fixed) depth order; compositing sums are accumulated in float64.

All math is dtype-parametric: training runs float32, the finite-difference
suite runs the identical code in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericsError, ShapeError
from ..parallel import ordered_map
from .types import Camera, Gaussians, RenderTarget

TILE = 16
NEAR_PLANE = 0.05     # metres; Gaussians closer than this are culled
LOW_PASS = 0.3        # px^2 added to the projected covariance diagonal
MAHA_MAX = 9.0        # 3-sigma footprint cutoff
ALPHA_MAX = 0.99
ALPHA_MIN = 1e-4      # contributions below this are skipped
T_MIN = 1e-4          # stop compositing when transmittance falls below


def build_covariance(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """World covariance R diag(s)^2 R^T from unit quaternions and scales."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 4)
    s = np.asarray(s, dtype=np.float64).reshape(-1, 3)
    R = _quat_to_rot(q)
    return np.einsum("nab,nb,ncb->nac", R, s * s, R)


def _quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class ScreenGaussian:
    mean2d: np.ndarray      # (2,) pixels
    cov2d: np.ndarray       # (2,2) pixels^2, low-pass already added
    depth: float            # view-space z, metres
    opacity: float
    color: np.ndarray


def project(mean3d, cov3d, cam: Camera) -> ScreenGaussian | None:
    """Project one Gaussian; returns None when culled by the near plane."""
    proj = _project_batch(np.asarray(mean3d, np.float64).reshape(1, 3),
                          np.asarray(cov3d, np.float64).reshape(1, 3, 3), cam,
                          np.float64)
    if not proj["valid"][0]:
        return None
    return ScreenGaussian(proj["mean2d"][0], proj["cov2d"][0],
                          float(proj["depth"][0]), None, None)


def _project_batch(means: np.ndarray, covs: np.ndarray, cam: Camera, dtype):
    R = cam.R.astype(dtype)
    tv = means.astype(dtype) @ R.T + cam.t.astype(dtype)
    depth = tv[:, 2]
    valid = depth > NEAR_PLANE
    z = np.where(valid, depth, 1.0)
    fx, fy = dtype(cam.fx), dtype(cam.fy)

    mean2d = np.stack([fx * tv[:, 0] / z + dtype(cam.cx),
                       fy * tv[:, 1] / z + dtype(cam.cy)], axis=1)

    # first-order projection Jacobian at the view-space mean
    J = np.zeros((means.shape[0], 2, 3), dtype=dtype)
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * tv[:, 0] / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * tv[:, 1] / (z * z)

    cov_view = np.einsum("ab,nbc,dc->nad", R, covs.astype(dtype), R)
    cov2d = np.einsum("nab,nbc,ndc->nad", J, cov_view, J)
    cov2d[:, 0, 0] += dtype(LOW_PASS)
    cov2d[:, 1, 1] += dtype(LOW_PASS)
    return {"t_view": tv, "depth": depth, "valid": valid, "mean2d": mean2d,
            "J": J, "cov_view": cov_view, "cov2d": cov2d}


def _inverse_2x2(cov: np.ndarray):
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    inv = np.empty_like(cov)
    inv[:, 0, 0] = c / det
    inv[:, 0, 1] = -b / det
    inv[:, 1, 0] = -b / det
    inv[:, 1, 1] = a / det
    return inv, det


def _tile_pairs(mean2d, cov2d, width, height):
    """Assign each (depth-sorted) Gaussian to the 16x16 tiles its 3-sigma
    bounding box overlaps; returns per-tile contiguous index runs."""
    m = mean2d.shape[0]
    rx = 3.0 * np.sqrt(cov2d[:, 0, 0])
    ry = 3.0 * np.sqrt(cov2d[:, 1, 1])
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    tx0 = np.clip(((mean2d[:, 0] - rx) // TILE).astype(np.int64), 0, ntx - 1)
    tx1 = np.clip(((mean2d[:, 0] + rx) // TILE).astype(np.int64), 0, ntx - 1)
    ty0 = np.clip(((mean2d[:, 1] - ry) // TILE).astype(np.int64), 0, nty - 1)
    ty1 = np.clip(((mean2d[:, 1] + ry) // TILE).astype(np.int64), 0, nty - 1)
    onscreen = (mean2d[:, 0] + rx >= 0) & (mean2d[:, 0] - rx < width) \
        & (mean2d[:, 1] + ry >= 0) & (mean2d[:, 1] - ry < height)
    spanx = np.where(onscreen, tx1 - tx0 + 1, 0)
    spany = np.where(onscreen, ty1 - ty0 + 1, 0)
    counts = spanx * spany
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), ntx, nty
    gauss = np.repeat(np.arange(m), counts)
    local = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(counts)[:-1]]),
                                         counts)
    sx = np.repeat(spanx, counts)
    kx = local % np.maximum(sx, 1)
    ky = local // np.maximum(sx, 1)
    tile = (np.repeat(ty0, counts) + ky) * ntx + np.repeat(tx0, counts) + kx
    order = np.argsort(tile, kind="stable")  # keeps depth order within tiles
    return tile[order], gauss[order], ntx, nty


def _tile_weights(args):
    """Shared forward math for one tile: footprints and blend weights."""
    (px, py, mu, Minv, opac, color) = args
    d0 = px[:, None] - mu[None, :, 0]
    d1 = py[:, None] - mu[None, :, 1]
    maha = (Minv[None, :, 0, 0] * d0 * d0
            + 2.0 * Minv[None, :, 0, 1] * d0 * d1
            + Minv[None, :, 1, 1] * d1 * d1)
    gval = np.where(maha <= MAHA_MAX, np.exp(-0.5 * maha), 0.0)
    alpha = np.minimum(opac[None, :] * gval, ALPHA_MAX)
    alpha = np.where(alpha < ALPHA_MIN, 0.0, alpha).astype(np.float64)
    one_m = 1.0 - alpha
    tprefix = np.cumprod(one_m, axis=1) / one_m  # exclusive prefix product
    tprefix[:, 0] = 1.0
    active = tprefix >= T_MIN
    w = alpha * tprefix * active
    return d0, d1, gval, alpha, one_m, tprefix, active, w


def _tile_forward(args):
    """Composite one tile front to back; returns flat (rgb, alpha)."""
    _, _, _, _, one_m, _, active, w = _tile_weights(args)
    rgb = w @ args[5].astype(np.float64)
    alpha_out = 1.0 - np.prod(np.where(active, one_m, 1.0), axis=1)
    return rgb, alpha_out


class RenderContext:
    """Saved forward state required by the backward pass."""

    def __init__(self):
        self.n = 0


def rasterize_arrays(means3d, covs3d, opac, colors, cam: Camera,
                     dtype=np.float32, order=None, want_ctx=False):
    """Core renderer over raw arrays (posed space). Returns (RenderTarget, ctx).

    `order`: optional explicit compositing order (original indices); when
    None, a stable sort by view depth is used.
    """
    n = len(means3d)
    H, W = cam.height, cam.width
    dtype = np.dtype(dtype).type
    rgb = np.zeros((H, W, 3), dtype=np.float64)
    alpha = np.zeros((H, W), dtype=np.float64)
    ctx = RenderContext()
    if n == 0:
        tgt = RenderTarget(rgb.astype(dtype), alpha.astype(dtype))
        return (tgt, ctx) if want_ctx else tgt

    means3d = np.asarray(means3d, dtype=dtype).reshape(n, 3)
    covs3d = np.asarray(covs3d, dtype=dtype).reshape(n, 3, 3)
    opac = np.asarray(opac, dtype=dtype).reshape(n)
    colors = np.asarray(colors, dtype=dtype).reshape(n, 3)
    if not (np.isfinite(means3d).all() and np.isfinite(covs3d).all()
            and np.isfinite(opac).all() and np.isfinite(colors).all()):
        for name, arr in (("position", means3d), ("covariance", covs3d),
                          ("opacity", opac), ("color", colors)):
            bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1)
            if bad.any():
                raise NumericsError(
                    f"gaussian {int(np.nonzero(bad)[0][0])}: non-finite {name}")

    proj = _project_batch(means3d, covs3d, cam, dtype)
    if order is None:
        cand = np.argsort(proj["depth"], kind="stable")
        sidx = cand[proj["valid"][cand]]
    else:
        order = np.asarray(order, dtype=np.int64)
        sidx = order[proj["valid"][order]]

    mu = proj["mean2d"][sidx]
    cov2d = proj["cov2d"][sidx]
    Minv, _ = _inverse_2x2(cov2d)
    op_s = opac[sidx]
    col_s = colors[sidx]

    tile_ids, tile_gauss, ntx, nty = _tile_pairs(mu, cov2d, W, H)
    boundaries = np.searchsorted(tile_ids, np.arange(ntx * nty + 1))

    jobs = []
    for tid in np.unique(tile_ids):
        lo, hi = boundaries[tid], boundaries[tid + 1]
        g = tile_gauss[lo:hi]
        tx, ty = tid % ntx, tid // ntx
        x0, y0 = tx * TILE, ty * TILE
        x1, y1 = min(x0 + TILE, W), min(y0 + TILE, H)
        xs = np.arange(x0, x1, dtype=np.float64) + 0.5
        ys = np.arange(y0, y1, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        jobs.append((tid, (x0, x1, y0, y1), g,
                     (gx.ravel(), gy.ravel(), mu[g].astype(np.float64),
                      Minv[g].astype(np.float64), op_s[g].astype(np.float64),
                      col_s[g])))

    results = ordered_map(lambda j: _tile_forward(j[3]), jobs)
    for (tid, (x0, x1, y0, y1), g, _), (trgb, talpha) in zip(jobs, results):
        h, w = y1 - y0, x1 - x0
        rgb[y0:y1, x0:x1] = trgb.reshape(h, w, 3)
        alpha[y0:y1, x0:x1] = talpha.reshape(h, w)

    if want_ctx:
        ctx.n = n
        ctx.cam = cam
        ctx.dtype = dtype
        ctx.proj = proj
        ctx.sidx = sidx
        ctx.mu, ctx.Minv, ctx.op_s, ctx.col_s = mu, Minv, op_s, col_s
        ctx.jobs = jobs
    tgt = RenderTarget(rgb.astype(dtype), np.clip(alpha, 0.0, 1.0).astype(dtype))
    return (tgt, ctx) if want_ctx else tgt


def _tile_backward(fwd_args, g_rgb):
    """Per-tile gradients w.r.t. 2D means, inverse covariances, opacity,
    color; recomputes the forward weights rather than caching them."""
    d0, d1, gval, alpha, one_m, tprefix, active, w = _tile_weights(fwd_args)
    op_g = fwd_args[4]
    col64 = fwd_args[5].astype(np.float64)
    cdot = g_rgb @ col64.T                       # (P,G) color-dot-upstream
    contrib = w * cdot
    suffix = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
    gcolor = w.T @ g_rgb                          # (G,3)
    galpha = np.where(active, tprefix * cdot - suffix / one_m, 0.0)
    clamped = (op_g[None, :] * gval >= ALPHA_MAX) | (alpha <= 0.0)
    galpha = np.where(clamped, 0.0, galpha)
    ggval = galpha * op_g[None, :]
    gopac = (galpha * gval).sum(axis=0)
    gmaha = -0.5 * gval * ggval
    # maha = M00 d0^2 + (M01 + M10) d0 d1 + M11 d1^2
    gM00 = (gmaha * d0 * d0).sum(axis=0)
    gM01 = (gmaha * d0 * d1).sum(axis=0)
    gM11 = (gmaha * d1 * d1).sum(axis=0)
    Minv = fwd_args[3]
    md0 = Minv[None, :, 0, 0] * d0 + Minv[None, :, 0, 1] * d1
    md1 = Minv[None, :, 1, 0] * d0 + Minv[None, :, 1, 1] * d1
    gmu = np.stack([-2.0 * (gmaha * md0).sum(axis=0),
                    -2.0 * (gmaha * md1).sum(axis=0)], axis=1)
    gMinv = np.empty((gM00.shape[0], 2, 2))
    gMinv[:, 0, 0] = gM00
    gMinv[:, 0, 1] = gM01
    gMinv[:, 1, 0] = gM01
    gMinv[:, 1, 1] = gM11
    return gcolor, gopac, gmu, gMinv


def rasterize_backward_arrays(ctx: RenderContext, g_rgb: np.ndarray):
    """Gradients w.r.t. (means3d, covs3d, opac, colors) given d(loss)/d(rgb)."""
    n = ctx.n
    dtype = ctx.dtype
    g_means = np.zeros((n, 3), dtype=np.float64)
    g_covs = np.zeros((n, 3, 3), dtype=np.float64)
    g_opac = np.zeros(n, dtype=np.float64)
    g_colors = np.zeros((n, 3), dtype=np.float64)
    if n == 0 or len(ctx.sidx) == 0:
        return (g_means.astype(dtype), g_covs.astype(dtype),
                g_opac.astype(dtype), g_colors.astype(dtype))

    m = len(ctx.sidx)
    gmu_s = np.zeros((m, 2), dtype=np.float64)
    gMinv_s = np.zeros((m, 2, 2), dtype=np.float64)
    gop_s = np.zeros(m, dtype=np.float64)
    gcol_s = np.zeros((m, 3), dtype=np.float64)
    g_rgb = np.asarray(g_rgb, dtype=np.float64)

    def run(job):
        _, (x0, x1, y0, y1), g, fwd_args = job
        gtile = g_rgb[y0:y1, x0:x1].reshape(-1, 3)
        return _tile_backward(fwd_args, gtile)

    results = ordered_map(run, ctx.jobs)
    for job, (gcolor, gopac, gmu_t, gMinv_t) in zip(ctx.jobs, results):
        g = job[2]
        np.add.at(gcol_s, g, gcolor)
        np.add.at(gop_s, g, gopac)
        np.add.at(gmu_s, g, gmu_t)
        np.add.at(gMinv_s, g, gMinv_t)

    # chain Minv -> cov2d: dL/dC = -Minv gMinv Minv
    Minv64 = ctx.Minv.astype(np.float64)
    gcov2d = -np.einsum("nab,nbc,ncd->nad", Minv64, gMinv_s, Minv64)

    # chain cov2d = J cov_view J^T + lowpass, cov_view = R cov3d R^T
    sidx = ctx.sidx
    J = ctx.proj["J"][sidx].astype(np.float64)
    cov_view = ctx.proj["cov_view"][sidx].astype(np.float64)
    R = ctx.cam.R
    gcov_view = np.einsum("nba,nbc,ncd->nad", J, gcov2d, J)
    gcov3d = np.einsum("ba,nbc,cd->nad", R, gcov_view, R)
    gJ = 2.0 * np.einsum("nab,nbc->nac", gcov2d, np.einsum("nab,nbc->nac", J, cov_view))

    # mean projection: mu = (fx tx/tz + cx, fy ty/tz + cy); dmu/dt = J
    gt = np.einsum("nba,nb->na", J, gmu_s)
    # J itself depends on the view-space position
    tv = ctx.proj["t_view"][sidx].astype(np.float64)
    z = tv[:, 2]
    fx, fy = ctx.cam.fx, ctx.cam.fy
    gt[:, 0] += gJ[:, 0, 2] * (-fx / (z * z))
    gt[:, 1] += gJ[:, 1, 2] * (-fy / (z * z))
    gt[:, 2] += (gJ[:, 0, 0] * (-fx / (z * z))
                 + gJ[:, 0, 2] * (2.0 * fx * tv[:, 0] / z ** 3)
                 + gJ[:, 1, 1] * (-fy / (z * z))
                 + gJ[:, 1, 2] * (2.0 * fy * tv[:, 1] / z ** 3))
    gmean = gt @ R  # R^T gt per row

    g_means[sidx] = gmean
    g_covs[sidx] = gcov3d
    g_opac[sidx] = gop_s
    g_colors[sidx] = gcol_s
    return (g_means.astype(dtype), g_covs.astype(dtype),
            g_opac.astype(dtype), g_colors.astype(dtype))


# ---------------------------------------------------------------------------
# public API over Gaussians (q,s parameterization)


def rasterize(gaussians: Gaussians, cam: Camera, dtype=np.float32,
              order=None, want_ctx=False):
    """Render a Gaussian scene; empty scenes give a black, fully
    transparent image."""
    gaussians.validate()
    covs = build_covariance(gaussians.q, gaussians.s)
    return rasterize_arrays(gaussians.x, covs, gaussians.o, gaussians.c, cam,
                            dtype=dtype, order=order, want_ctx=want_ctx)


def _cov_to_qs_grads(q, s, gcov):
    """Chain d(loss)/d(cov) to the quaternion/scale parameterization."""
    q = np.asarray(q, np.float64).reshape(-1, 4)
    s = np.asarray(s, np.float64).reshape(-1, 3)
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    R = _quat_to_rot(qn)
    D = s * s
    gsym = gcov + np.swapaxes(gcov, 1, 2)
    gR = np.einsum("nab,nbc->nac", gsym, R * D[:, None, :])
    gs = 2.0 * s * np.einsum("nia,nij,nja->na", R, gcov, R)
    # quaternion jacobian of R(q), then through the normalization
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = gR
    gq = np.empty_like(qn)
    gq[:, 0] = 2 * (-z * (g[:, 0, 1] - g[:, 1, 0]) + y * (g[:, 0, 2] - g[:, 2, 0])
                    - x * (g[:, 1, 2] - g[:, 2, 1]))
    gq[:, 1] = 2 * (y * (g[:, 0, 1] + g[:, 1, 0]) + z * (g[:, 0, 2] + g[:, 2, 0])
                    - w * (g[:, 1, 2] - g[:, 2, 1]) - 2 * x * (g[:, 1, 1] + g[:, 2, 2]))
    gq[:, 2] = 2 * (x * (g[:, 0, 1] + g[:, 1, 0]) + w * (g[:, 0, 2] - g[:, 2, 0])
                    + z * (g[:, 1, 2] + g[:, 2, 1]) - 2 * y * (g[:, 0, 0] + g[:, 2, 2]))
    gq[:, 3] = 2 * (-w * (g[:, 0, 1] - g[:, 1, 0]) + x * (g[:, 0, 2] + g[:, 2, 0])
                    + y * (g[:, 1, 2] + g[:, 2, 1]) - 2 * z * (g[:, 0, 0] + g[:, 1, 1]))
    nrm = np.linalg.norm(q, axis=1, keepdims=True)
    gq = (gq - qn * (gq * qn).sum(axis=1, keepdims=True)) / nrm
    return gq, gs


def rasterize_backward(gaussians: Gaussians, cam: Camera, g_rgb: np.ndarray,
                       dtype=np.float32, order=None):
    """Analytic gradients of the rendered RGB w.r.t. every Gaussian attribute.

    Returns a dict with keys x,q,s,o,c. Gaussians that contribute to no
    pixel receive exactly zero gradient.
    """
    if g_rgb.shape != (cam.height, cam.width, 3):
        raise ShapeError("rasterize_backward: upstream gradient shape mismatch")
    gaussians.validate()
    covs = build_covariance(gaussians.q, gaussians.s)
    _, ctx = rasterize_arrays(gaussians.x, covs, gaussians.o, gaussians.c, cam,
                              dtype=dtype, order=order, want_ctx=True)
    gx, gcov, go, gc = rasterize_backward_arrays(ctx, g_rgb)
    gq, gs = _cov_to_qs_grads(gaussians.q, gaussians.s, gcov.astype(np.float64))
    return {"x": gx, "q": gq.astype(dtype), "s": gs.astype(dtype),
            "o": go, "c": gc}
