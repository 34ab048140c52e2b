"""Textured canonical templates and skeleton-scale normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .skeleton import PoseParams, Skeleton, bone_transforms
from .skinning import SkinningField, deform_points, diffuse_skinning, lbs_blend


@dataclass
class TexturedTemplate:
    """Canonical surface mesh with per-vertex color."""

    vertices: np.ndarray    # (V,3) metres
    faces: np.ndarray       # (F,3) int
    colors: np.ndarray      # (V,3) in [0,1]
    normals: np.ndarray     # (V,3) unit

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.faces.size and self.faces.max() >= len(self.vertices):
            raise ShapeError("TexturedTemplate: face index out of range")

    def save(self, path):
        np.savez_compressed(path, vertices=self.vertices.astype(np.float32),
                            faces=self.faces.astype(np.int32),
                            colors=self.colors.astype(np.float32),
                            normals=self.normals.astype(np.float32))

    @classmethod
    def load(cls, path) -> "TexturedTemplate":
        d = np.load(path)
        return cls(d["vertices"], d["faces"], d["colors"], d["normals"])


def mesh_vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted per-vertex normals."""
    n = np.zeros_like(vertices, dtype=np.float64)
    fv = vertices[faces]
    fn = np.cross(fv[:, 1] - fv[:, 0], fv[:, 2] - fv[:, 0])
    for k in range(3):
        np.add.at(n, faces[:, k], fn)
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)


def normalize_template(template: TexturedTemplate, subject_beta: np.ndarray,
                       skeleton: Skeleton,
                       field: SkinningField | None = None
                       ) -> tuple[TexturedTemplate, SkinningField]:
    """Retarget a canonical template from its subject skeleton scale to the
    average skeleton (beta = 1) via blended per-bone transforms.

    Per-vertex skinning weights are carried through unchanged, so the
    returned SkinningField is the canonical-space weight field of the
    normalized template. Normalizing an already-average template is the
    identity.
    """
    source = PoseParams.canonical(skeleton, beta=subject_beta)
    if field is None:
        field = diffuse_skinning(template.vertices, skeleton, pose=source)
    B = bone_transforms(skeleton, PoseParams.canonical(skeleton), source=source)
    T = lbs_blend(field.weights, B)
    v_norm = deform_points(template.vertices, T)
    out = TexturedTemplate(v_norm, template.faces, template.colors,
                           mesh_vertex_normals(v_norm, template.faces))
    return out, SkinningField(v_norm, field.weights)
