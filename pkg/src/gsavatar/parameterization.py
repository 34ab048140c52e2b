"""Front/back orthographic parameterization of canonical templates.

The canonical body is projected orthographically along the z axis into a
shared R x R grid covering a fixed square window. Both sides live in the
same image frame (identical world-(x,y) to pixel mapping): the front map
keeps the surface nearest to +z, the back map the surface nearest to -z,
so a pixel addresses the same body column on both sides.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import Tensor, ops
from .errors import ContractError, DataError, ShapeError
from .pngio import save_rgba
from .skeleton import PoseParams, Skeleton, bone_transforms
from .skinning import SkinningField, deform_points, lbs_blend
from .templates import TexturedTemplate

MAP_FORMAT = "gsavatar-maps"
MAP_VERSION = 1
WINDOW_SIZE = 2.2          # metres covered by the map, square
SIDES = ("front", "back")

# Gaussian decode constants
SCALE_BASE_TEXELS = 0.55   # default gaussian scale in units of one texel
SCALE_MIN = 1e-4           # metres
SCALE_MAX = 0.2            # metres
QUAT_BIAS = np.array([1.0, 0.0, 0.0, 0.0], dtype=np.float32)


@dataclass
class CanonicalMapSet:
    """Per-side mask / position / texture maps on a shared grid."""

    resolution: int
    center: np.ndarray              # (2,) world x,y of the window center
    mask: np.ndarray                # (2,R,R) bool, [front, back]
    position: np.ndarray            # (2,3,R,R) float32, metres
    texture: np.ndarray             # (2,3,R,R) float32, [0,1]
    window: float = WINDOW_SIZE

    def __post_init__(self):
        R = self.resolution
        if self.mask.shape != (2, R, R) or self.position.shape != (2, 3, R, R) \
                or self.texture.shape != (2, 3, R, R):
            raise ShapeError("CanonicalMapSet: inconsistent shapes")

    @property
    def units_per_pixel(self) -> float:
        return self.window / self.resolution

    def flat_indices(self, side: int) -> np.ndarray:
        """Row-major flat indices of valid pixels on one side."""
        return np.nonzero(self.mask[side].reshape(-1))[0]

    def valid_counts(self) -> tuple[int, int]:
        return int(self.mask[0].sum()), int(self.mask[1].sum())

    def save(self, path):
        np.savez_compressed(
            path, resolution=np.int32(self.resolution),
            center=self.center.astype(np.float32), window=np.float32(self.window),
            mask=self.mask, position=self.position.astype(np.float32),
            texture=self.texture.astype(np.float32),
            meta=np.frombuffer(json.dumps({
                "format": MAP_FORMAT, "version": MAP_VERSION,
                "sides": list(SIDES), "units_per_pixel": self.units_per_pixel,
            }).encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "CanonicalMapSet":
        d = np.load(path)
        meta = json.loads(bytes(d["meta"]).decode())
        if meta.get("format") != MAP_FORMAT:
            raise DataError(f"{path}: not a map-set file")
        return cls(int(d["resolution"]), d["center"].astype(np.float64),
                   d["mask"], d["position"], d["texture"], float(d["window"]))

    def export_texture_png(self, path_front, path_back):
        for side, path in ((0, path_front), (1, path_back)):
            img = np.moveaxis(self.texture[side], 0, 2)
            save_rgba(path, img, self.mask[side].astype(np.float32))


def _ortho_raster(template: TexturedTemplate, resolution: int, center,
                  window: float):
    """Orthographic z-buffered rasterization of both sides in one pass."""
    R = resolution
    scale = R / window
    v = template.vertices
    u = (v[:, 0] - center[0]) * scale + R / 2.0
    w = (center[1] - v[:, 1]) * scale + R / 2.0  # +y up -> row down

    zmax = np.full((R, R), -np.inf)
    zmin = np.full((R, R), np.inf)
    out_pos = np.zeros((2, 3, R, R), dtype=np.float64)
    out_col = np.zeros((2, 3, R, R), dtype=np.float64)
    hit = np.zeros((2, R, R), dtype=bool)

    tri = template.faces
    for f in range(len(tri)):
        i0, i1, i2 = tri[f]
        xs = np.array([u[i0], u[i1], u[i2]])
        ys = np.array([w[i0], w[i1], w[i2]])
        x0 = max(int(np.floor(xs.min() - 0.5)), 0)
        x1 = min(int(np.ceil(xs.max() + 0.5)), R - 1)
        y0 = max(int(np.floor(ys.min() - 0.5)), 0)
        y1 = min(int(np.ceil(ys.max() + 0.5)), R - 1)
        if x1 < x0 or y1 < y0:
            continue
        area = (xs[1] - xs[0]) * (ys[2] - ys[0]) - (xs[2] - xs[0]) * (ys[1] - ys[0])
        if abs(area) < 1e-12:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1 + 1) + 0.5,
                             np.arange(y0, y1 + 1) + 0.5)
        w0 = ((xs[1] - gx) * (ys[2] - gy) - (xs[2] - gx) * (ys[1] - gy)) / area
        w1 = ((xs[2] - gx) * (ys[0] - gy) - (xs[0] - gx) * (ys[2] - gy)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= -1e-9)
        if not inside.any():
            continue
        iy, ix = np.nonzero(inside)
        py, px = iy + y0, ix + x0
        bw = np.stack([w0[iy, ix], w1[iy, ix], w2[iy, ix]], axis=1)
        pos = bw @ v[[i0, i1, i2]]
        col = bw @ template.colors[[i0, i1, i2]]
        z = pos[:, 2]

        front_win = z > zmax[py, px]
        if front_win.any():
            sel = front_win
            zmax[py[sel], px[sel]] = z[sel]
            out_pos[0, :, py[sel], px[sel]] = pos[sel]
            out_col[0, :, py[sel], px[sel]] = col[sel]
            hit[0, py[sel], px[sel]] = True
        back_win = z < zmin[py, px]
        if back_win.any():
            sel = back_win
            zmin[py[sel], px[sel]] = z[sel]
            out_pos[1, :, py[sel], px[sel]] = pos[sel]
            out_col[1, :, py[sel], px[sel]] = col[sel]
            hit[1, py[sel], px[sel]] = True
    return hit, out_pos, out_col


def bake_maps(template: TexturedTemplate, resolution: int,
              window: float = WINDOW_SIZE) -> CanonicalMapSet:
    """Orthographically project a normalized canonical template into
    front (+z) and back (-z) mask/position/texture maps."""
    if resolution < 16:
        raise ContractError("bake_maps: resolution must be >= 16")
    if len(template.faces) == 0:
        raise ContractError("bake_maps: template has no faces")
    lo = template.vertices.min(axis=0)
    hi = template.vertices.max(axis=0)
    center = 0.5 * (lo[:2] + hi[:2])
    hit, pos, col = _ortho_raster(template, resolution, center, window)
    pos[:, :, ~hit[0] & ~hit[1]] = 0.0  # zero-fill fully-empty pixels
    for side in range(2):
        pos[side][:, ~hit[side]] = 0.0
        col[side][:, ~hit[side]] = 0.0
    return CanonicalMapSet(resolution, center, hit,
                           pos.astype(np.float32),
                           np.clip(col, 0.0, 1.0).astype(np.float32))


@dataclass
class PosedPositionMaps:
    """Forward-LBS image of the canonical position maps (root excluded)."""

    position: np.ndarray    # (2,3,R,R) float32
    mask: np.ndarray        # shared with the source CanonicalMapSet


def pixel_skinning_weights(maps: CanonicalMapSet, field: SkinningField) -> np.ndarray:
    """Skinning weights (M,J) for every valid pixel, front rows first."""
    pts = np.concatenate([
        maps.position[side].reshape(3, -1).T[maps.flat_indices(side)]
        for side in range(2)
    ], axis=0)
    return field.query(pts)


def pose_maps(maps: CanonicalMapSet, field: SkinningField, pose: PoseParams,
              skeleton: Skeleton, source: PoseParams | None = None,
              pixel_weights: np.ndarray | None = None) -> PosedPositionMaps:
    """Deform each valid pixel's stored point by forward LBS, with the
    global root rotation/translation forced to identity."""
    local = pose.copy()
    local.root_rotation = np.zeros(3)
    local.root_translation = np.zeros(3)
    B = bone_transforms(skeleton, local, source=source)
    if pixel_weights is None:
        pixel_weights = pixel_skinning_weights(maps, field)
    T = lbs_blend(pixel_weights, B)   # (M,4,4)

    out = np.array(maps.position, dtype=np.float32, copy=True)
    nf = len(maps.flat_indices(0))
    for side in range(2):
        idx = maps.flat_indices(side)
        pts = maps.position[side].reshape(3, -1).T[idx]
        Ts = T[:nf] if side == 0 else T[nf:]
        posed = deform_points(pts, Ts)
        flat = out[side].reshape(3, -1)
        flat[:, idx] = posed.T.astype(np.float32)
    return PosedPositionMaps(out, maps.mask)


@dataclass
class DecodedGaussians:
    """Per-pixel Gaussian attributes decoded from a Gaussian map (on tape)."""

    x: Tensor          # (M,3) canonical positions
    q: Tensor          # (M,4) unit quaternions
    s: Tensor          # (M,3) scales, metres
    o: Tensor          # (M,) opacity
    c: Tensor          # (M,3) color
    dx: Tensor         # (M,3) raw position offsets (for the offset loss)
    n_front: int = 0
    n_back: int = 0


# per-side Gaussian-map channel layout
CH_DX = slice(0, 3)
CH_DC = slice(3, 6)
CH_Q = slice(6, 10)
CH_LOGS = slice(10, 13)
CH_OPACITY = slice(13, 14)
GMAP_CHANNELS_PER_SIDE = 14


def extract_gaussians(gmap: Tensor, maps: CanonicalMapSet,
                      scale_base_texels: float = SCALE_BASE_TEXELS) -> DecodedGaussians:
    """One Gaussian per valid mask pixel (front then back), decoded from the
    28-channel Gaussian map.

    Decode: x = P_c + dx, c = clamp(T_c + dc), q = normalize(q_raw + e0),
    scale = clamp(base * exp(log_scale)) with base tied to the texel size,
    opacity = sigmoid(logit). All-zero channels therefore reproduce the
    plain template with default scales and opacity 0.5.
    """
    R = maps.resolution
    if gmap.data.shape != (1, 2 * GMAP_CHANNELS_PER_SIDE, R, R):
        raise ShapeError(
            f"extract_gaussians: gmap {gmap.data.shape} does not match R={R}")
    base = scale_base_texels * maps.units_per_pixel

    parts = {k: [] for k in ("x", "q", "s", "o", "c", "dx")}
    counts = []
    for side in range(2):
        idx = maps.flat_indices(side)
        counts.append(len(idx))
        ch0 = side * GMAP_CHANNELS_PER_SIDE
        pix = ops.gather_pixels(
            ops.slice_channels(gmap, ch0, ch0 + GMAP_CHANNELS_PER_SIDE), idx)
        p_c = maps.position[side].reshape(3, -1).T[idx]
        t_c = maps.texture[side].reshape(3, -1).T[idx]

        dx = ops.slice_cols(pix, CH_DX.start, CH_DX.stop)
        dc = ops.slice_cols(pix, CH_DC.start, CH_DC.stop)
        qr = ops.slice_cols(pix, CH_Q.start, CH_Q.stop)
        ls = ops.slice_cols(pix, CH_LOGS.start, CH_LOGS.stop)
        ol = ops.slice_cols(pix, CH_OPACITY.start, CH_OPACITY.stop)

        parts["dx"].append(dx)
        parts["x"].append(ops.add_const(dx, p_c))
        parts["c"].append(ops.clamp(ops.add_const(dc, t_c), 0.0, 1.0))
        parts["q"].append(ops.normalize_rows(ops.add_const(qr, QUAT_BIAS[None, :])))
        parts["s"].append(ops.clamp(ops.scale(ops.exp(ls), base), SCALE_MIN, SCALE_MAX))
        parts["o"].append(ops.reshape(ops.sigmoid(ol), (-1,)))

    out = {k: ops.concat_rows(v) for k, v in parts.items()}
    return DecodedGaussians(x=out["x"], q=out["q"], s=out["s"],
                            o=out["o"], c=out["c"], dx=out["dx"],
                            n_front=counts[0], n_back=counts[1])
