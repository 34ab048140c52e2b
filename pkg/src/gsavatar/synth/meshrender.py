"""Z-buffered perspective triangle rasterizer for ground-truth renders.

Deliberately independent of the splat renderer: plain barycentric
coverage with perspective-correct color interpolation and supersampled
anti-aliasing. The two renderers cross-validate each other.
"""

from __future__ import annotations

import numpy as np

from ..skeleton import PoseParams, Skeleton, bone_transforms
from ..skinning import SkinningField, deform_points, lbs_blend
from ..splat.types import Camera, RenderTarget

MESH_NEAR = 0.05
SSAA = 2


def render_mesh(vertices: np.ndarray, faces: np.ndarray, colors: np.ndarray,
                cam: Camera, ssaa: int = SSAA) -> RenderTarget:
    """Render a colored triangle mesh over a black background."""
    W, H = cam.width * ssaa, cam.height * ssaa
    fx, fy, cx, cy = cam.fx * ssaa, cam.fy * ssaa, cam.cx * ssaa, cam.cy * ssaa
    rgb = np.zeros((H, W, 3))
    zbuf = np.full((H, W), np.inf)
    hit = np.zeros((H, W), dtype=bool)

    tv = np.asarray(vertices, np.float64) @ cam.R.T + cam.t
    z = tv[:, 2]
    ok = z > MESH_NEAR
    u = np.where(ok, fx * tv[:, 0] / np.where(ok, z, 1.0) + cx, 0.0)
    v = np.where(ok, fy * tv[:, 1] / np.where(ok, z, 1.0) + cy, 0.0)
    inv_z = np.where(ok, 1.0 / np.where(ok, z, 1.0), 0.0)
    cols = np.asarray(colors, np.float64)

    for f in faces:
        i0, i1, i2 = f
        if not (ok[i0] and ok[i1] and ok[i2]):
            continue
        xs = np.array([u[i0], u[i1], u[i2]])
        ys = np.array([v[i0], v[i1], v[i2]])
        x0 = max(int(np.floor(xs.min())), 0)
        x1 = min(int(np.ceil(xs.max())), W - 1)
        y0 = max(int(np.floor(ys.min())), 0)
        y1 = min(int(np.ceil(ys.max())), H - 1)
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
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        iy, ix = np.nonzero(inside)
        py, px = iy + y0, ix + x0
        bw = np.stack([w0[iy, ix], w1[iy, ix], w2[iy, ix]], axis=1)
        # perspective-correct interpolation via 1/z weights
        izs = np.array([inv_z[i0], inv_z[i1], inv_z[i2]])
        iz = bw @ izs
        depth = 1.0 / iz
        closer = depth < zbuf[py, px]
        if not closer.any():
            continue
        sel = closer
        pys, pxs = py[sel], px[sel]
        zbuf[pys, pxs] = depth[sel]
        cw = bw[sel] * izs[None, :]
        col = (cw @ cols[[i0, i1, i2]]) * depth[sel][:, None]
        rgb[pys, pxs] = col
        hit[pys, pxs] = True

    if ssaa > 1:
        h, w = cam.height, cam.width
        rgb = rgb.reshape(h, ssaa, w, ssaa, 3).mean(axis=(1, 3))
        alpha = hit.reshape(h, ssaa, w, ssaa).mean(axis=(1, 3))
    else:
        alpha = hit.astype(np.float64)
    return RenderTarget(np.clip(rgb, 0.0, 1.0).astype(np.float32),
                        alpha.astype(np.float32))


def pose_dependent_displacement(canonical_vertices: np.ndarray,
                                normals: np.ndarray,
                                weights: np.ndarray,
                                pose: PoseParams,
                                skeleton: Skeleton,
                                amplitude: float = 0.004,
                                frequency: float = 40.0) -> np.ndarray:
    """Wrinkle-like canonical-space displacement keyed to limb bending.

    High-frequency ripples along the body's vertical axis whose amplitude
    follows the bend angle of the nearby elbow/knee joints; a stand-in for
    pose-dependent cloth deformation, baked only into ground truth.
    """
    bend_names = ("l_fore_arm", "r_fore_arm", "l_shin", "r_shin",
                  "l_upper_arm", "r_upper_arm", "l_thigh", "r_thigh")
    idx = [skeleton.names.index(n) for n in bend_names]
    angles = np.linalg.norm(pose.theta[idx], axis=1)
    influence = weights[:, idx] @ angles          # (V,)
    ripple = np.sin(frequency * canonical_vertices[:, 1]
                    + 3.0 * canonical_vertices[:, 0])
    return (amplitude * ripple * influence)[:, None] * normals


def render_ground_truth(template, field: SkinningField, pose: PoseParams,
                        cam: Camera, skeleton: Skeleton,
                        source: PoseParams | None = None,
                        displacement: bool = True, ssaa: int = SSAA) -> RenderTarget:
    """Pose the template by per-vertex LBS and rasterize it.

    `source` is the pose the template's vertices live in (defaults to the
    canonical pose at average scale).
    """
    B = bone_transforms(skeleton, pose, source=source)
    w = field.weights if len(field.vertices) == len(template.vertices) \
        else field.query(template.vertices)
    T = lbs_blend(w, B)
    verts = template.vertices
    if displacement:
        verts = verts + pose_dependent_displacement(
            template.vertices, template.normals, w, pose, skeleton)
    posed = deform_points(verts, T)
    return render_mesh(posed, template.faces, template.colors, cam, ssaa=ssaa)
