"""Diffused skinning weights and linear blend skinning.

Per-vertex weights fall off as a Gaussian RBF of the distance to the K
nearest bone segments; arbitrary canonical points are skinned by
interpolating the weights of nearby template vertices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, ShapeError
from .skeleton import PoseParams, Skeleton, bone_segments

RBF_BANDWIDTH_FACTOR = 1.5   # sigma = factor * bone radius
K_BONES = 8                  # bones kept per point
K_QUERY = 4                  # template vertices blended per query point


def segment_distances(points: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Distances (N,J) from each point to each bone segment."""
    p = np.asarray(points, dtype=np.float64)[:, None, :]      # (N,1,3)
    a = segments[None, :, 0, :]                               # (1,J,3)
    b = segments[None, :, 1, :]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-18)
    t = np.clip(((p - a) * ab).sum(-1) / denom, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def bone_weights(points: np.ndarray, segments: np.ndarray, radii: np.ndarray,
                 k: int = K_BONES) -> np.ndarray:
    """Gaussian-RBF bone weights (N,J), K-sparse and normalized to 1."""
    d = segment_distances(points, segments)
    sigma = RBF_BANDWIDTH_FACTOR * np.asarray(radii, dtype=np.float64)
    w = np.exp(-0.5 * (d / sigma[None, :]) ** 2)
    J = segments.shape[0]
    if k < J:
        # zero all but the k nearest bones (by segment distance)
        kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
        w = np.where(d <= kth, w, 0.0)
    total = w.sum(axis=1, keepdims=True)
    # far-field points: fall back to the single nearest bone
    degenerate = total[:, 0] < 1e-30
    if np.any(degenerate):
        idx = np.argmin(d[degenerate], axis=1)
        w[degenerate] = 0.0
        w[np.nonzero(degenerate)[0], idx] = 1.0
        total = w.sum(axis=1, keepdims=True)
    return w / total


@dataclass
class SkinningField:
    """Per-vertex weights plus nearest-vertex interpolation for queries."""

    vertices: np.ndarray   # (V,3) canonical positions the weights live on
    weights: np.ndarray    # (V,J) nonnegative, rows sum to 1

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.vertices.shape[0] != self.weights.shape[0]:
            raise ShapeError("SkinningField: vertex/weight count mismatch")
        self._tree = cKDTree(self.vertices)

    @property
    def n_bones(self) -> int:
        return self.weights.shape[1]

    def query(self, points: np.ndarray, k: int = K_QUERY) -> np.ndarray:
        """Interpolated weights (N,J) at arbitrary canonical points."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        k = min(k, self.vertices.shape[0])
        dist, idx = self._tree.query(points, k=k)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]
        inv = 1.0 / np.maximum(dist, 1e-12)
        exact = dist[:, 0] < 1e-12           # on-vertex queries are exact
        inv[exact] = 0.0
        inv[exact, 0] = 1.0
        inv /= inv.sum(axis=1, keepdims=True)
        w = np.einsum("nk,nkj->nj", inv, self.weights[idx])
        return w / w.sum(axis=1, keepdims=True)

    def save(self, path):
        np.savez_compressed(path, vertices=self.vertices.astype(np.float32),
                            weights=self.weights.astype(np.float32))

    @classmethod
    def load(cls, path) -> "SkinningField":
        data = np.load(path)
        return cls(data["vertices"].astype(np.float64),
                   data["weights"].astype(np.float64))


def diffuse_skinning(template_vertices: np.ndarray, skeleton: Skeleton,
                     pose: PoseParams | None = None, k: int = K_BONES) -> SkinningField:
    """Diffused skinning weights for a template in its canonical pose."""
    verts = np.asarray(template_vertices, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] == 0:
        raise ShapeError("diffuse_skinning: vertices must be (V,3), nonempty")
    if np.allclose(verts.std(axis=0), 0.0, atol=1e-12):
        raise ContractError("diffuse_skinning: degenerate template (coincident vertices)")
    if pose is None:
        pose = PoseParams.canonical(skeleton)
    segs = bone_segments(skeleton, pose)
    w = bone_weights(verts, segs, skeleton.radii, k=k)
    return SkinningField(verts, w)


# ---------------------------------------------------------------------------
# linear blend skinning


def lbs_blend(point_weights: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Convex combination of bone matrices: (...,J) x (J,4,4) -> (...,4,4)."""
    w = np.asarray(point_weights, dtype=np.float64)
    return np.einsum("...j,jab->...ab", w, B)


def deform_points(points: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Apply per-point 4x4 (or a single shared) transforms to (N,3) points."""
    points = np.asarray(points, dtype=np.float64)
    if T.ndim == 2:
        return points @ T[:3, :3].T + T[:3, 3]
    return np.einsum("nab,nb->na", T[:, :3, :3], points) + T[:, :3, 3]


def deform_covs(covs: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Sigma_d = T_{1:3} Sigma T_{1:3}^T, per point."""
    A = T[:3, :3][None] if T.ndim == 2 else T[:, :3, :3]
    out = np.einsum("nab,nbc,ndc->nad", A, np.asarray(covs, dtype=np.float64), A)
    return 0.5 * (out + np.swapaxes(out, -1, -2))  # keep exact symmetry
