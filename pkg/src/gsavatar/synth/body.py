"""Procedural capsule-and-ellipsoid bodies with per-vertex texture programs.

Every subject expands deterministically from a seed: bone scales, limb
radii, texture program and palette, and a band-limited pose sequence. The
texture programs are deliberately dominated by (x,y)-structure so front
and back texels of one body column correlate, which is what makes texture
completion from partial views learnable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..templates import TexturedTemplate, mesh_vertex_normals
from ..skeleton import (PoseParams, Skeleton, default_human_skeleton,
                        fk_frames)
from ..skinning import SkinningField, diffuse_skinning

TEXTURE_PROGRAMS = ("blocks", "h_stripes", "v_stripes", "checker")

# mesh parts: (from_joint, to_joint or None->tip, radius_key, ellipticity xz)
_BODY_PARTS = [
    ("pelvis", "spine", "torso", (1.45, 0.82)),
    ("spine", "chest", "torso", (1.5, 0.85)),
    ("chest", "neck", "torso", (1.35, 0.8)),
    ("neck", "head", "neck", (1.0, 1.0)),
    ("head", None, "head", (0.95, 1.05)),
    ("l_upper_arm", "l_fore_arm", "arm", (1.0, 1.0)),
    ("l_fore_arm", "l_hand", "arm", (0.9, 0.9)),
    ("l_hand", None, "arm", (0.9, 0.75)),
    ("r_upper_arm", "r_fore_arm", "arm", (1.0, 1.0)),
    ("r_fore_arm", "r_hand", "arm", (0.9, 0.9)),
    ("r_hand", None, "arm", (0.9, 0.75)),
    ("l_thigh", "l_shin", "leg", (1.0, 1.0)),
    ("l_shin", "l_foot", "leg", (0.85, 0.85)),
    ("l_foot", None, "leg", (0.8, 1.1)),
    ("r_thigh", "r_shin", "leg", (1.0, 1.0)),
    ("r_shin", "r_foot", "leg", (0.85, 0.85)),
    ("r_foot", None, "leg", (0.8, 1.1)),
]

_SKIN_PARTS = {"neck", "head", "l_hand", "r_hand"}

_PALETTE = np.array([
    [0.82, 0.18, 0.15], [0.16, 0.35, 0.78], [0.12, 0.62, 0.28],
    [0.92, 0.75, 0.12], [0.55, 0.2, 0.65], [0.9, 0.45, 0.1],
    [0.2, 0.7, 0.7], [0.85, 0.85, 0.85], [0.2, 0.2, 0.25],
    [0.6, 0.4, 0.2],
])


@dataclass
class ProceduralBodySpec:
    """Deterministic recipe for one synthetic subject."""

    seed: int
    beta: np.ndarray = None              # (J,) bone scales
    radius_scales: dict = None           # per radius_key multiplier
    texture_program: str = "blocks"
    texture_params: dict = field(default_factory=dict)
    mesh_segments: int = 16              # circumferential resolution

    @classmethod
    def sample(cls, seed: int, skeleton: Skeleton | None = None,
               mesh_segments: int = 16) -> "ProceduralBodySpec":
        skeleton = skeleton or default_human_skeleton()
        rng = np.random.default_rng(seed)
        beta = np.ones(skeleton.n_joints)
        # symmetric bone-scale variation, one factor per left/right pair
        groups = {}
        for j, name in enumerate(skeleton.names):
            key = name[2:] if name[:2] in ("l_", "r_") else name
            if key not in groups:
                groups[key] = float(rng.uniform(0.85, 1.15))
            beta[j] = groups[key]
        radius_scales = {k: float(rng.uniform(0.85, 1.2))
                         for k in ("torso", "arm", "leg", "head", "neck")}
        program = TEXTURE_PROGRAMS[int(rng.integers(len(TEXTURE_PROGRAMS)))]
        cols = rng.permutation(len(_PALETTE))[:3]
        params = {
            "colors": _PALETTE[cols].tolist(),
            "skin": [float(v) for v in rng.uniform([0.6, 0.45, 0.35], [0.9, 0.7, 0.6])],
            "period": float(rng.uniform(0.09, 0.16)),
            "phase": float(rng.uniform(0.0, np.pi)),
            "noise_amp": float(rng.uniform(0.02, 0.05)),
            "noise_seed": int(rng.integers(1 << 31)),
        }
        return cls(seed=seed, beta=beta, radius_scales=radius_scales,
                   texture_program=program, texture_params=params,
                   mesh_segments=mesh_segments)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "beta": self.beta.tolist(),
                "radius_scales": self.radius_scales,
                "texture_program": self.texture_program,
                "texture_params": self.texture_params,
                "mesh_segments": self.mesh_segments}

    @classmethod
    def from_dict(cls, d: dict) -> "ProceduralBodySpec":
        d = dict(d)
        d["beta"] = np.asarray(d["beta"], dtype=np.float64)
        return cls(**d)


def _orthonormal_frame(axis: np.ndarray):
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(axis, helper)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)
    return u, v, axis


def _capsule(p0, p1, radius, ell, segments, rings_per_m=40.0):
    """Capsule mesh from p0 to p1 with elliptical cross-section (ex, ez)."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    if length < 1e-9:
        axis = np.array([0.0, 1.0, 0.0])
        length = 1e-6
    u, v, a = _orthonormal_frame(axis)
    ex, ez = ell

    n_cap = 4
    n_mid = max(int(length * rings_per_m), 2)
    rings = []  # (axial position, ring radius)
    for i in range(1, n_cap + 1):               # bottom hemisphere
        ang = i / n_cap * np.pi / 2
        rings.append((-radius * np.cos(ang), radius * np.sin(ang)))
    for i in range(1, n_mid + 1):               # cylinder (equator already added)
        rings.append((length * i / n_mid, radius))
    for i in range(1, n_cap):                   # top hemisphere (pole excluded)
        ang = i / n_cap * np.pi / 2
        rings.append((length + radius * np.sin(ang), radius * np.cos(ang)))

    ks = np.arange(segments)
    cos_t = np.cos(2 * np.pi * ks / segments)
    sin_t = np.sin(2 * np.pi * ks / segments)
    verts = [p0 - radius * a]                   # bottom pole
    for t, r in rings:
        centre = p0 + a * t
        ring = centre[None, :] + r * (ex * cos_t[:, None] * u[None, :]
                                      + ez * sin_t[:, None] * v[None, :])
        verts.append(ring)
    verts.append(p1 + radius * a)               # top pole
    verts = np.vstack([np.atleast_2d(x) for x in verts])

    n_rings = (len(verts) - 2) // segments
    faces = []
    for k in range(segments):                   # bottom fan
        faces.append([0, 1 + k, 1 + (k + 1) % segments])
    for ring in range(n_rings - 1):
        b0 = 1 + ring * segments
        b1 = b0 + segments
        for k in range(segments):
            k2 = (k + 1) % segments
            faces.append([b0 + k, b1 + k, b1 + k2])
            faces.append([b0 + k, b1 + k2, b0 + k2])
    top = len(verts) - 1
    b0 = 1 + (n_rings - 1) * segments
    for k in range(segments):                   # top fan
        faces.append([top, b0 + (k + 1) % segments, b0 + k])
    return verts, np.array(faces, dtype=np.int64)


def _smooth_noise(p: np.ndarray, seed: int, octaves: int = 3) -> np.ndarray:
    """Deterministic smooth scalar field in [-1,1] from sine mixtures."""
    rng = np.random.default_rng(seed)
    out = np.zeros(p.shape[0])
    for o in range(octaves):
        freq = 18.0 * (1.7 ** o)
        dirs = rng.normal(size=3)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.sin(p @ dirs * freq / np.linalg.norm(dirs) + phase) / (o + 1)
    return out / octaves


def _program_colors(prog: str, params: dict, pts: np.ndarray,
                    part_key: str, skin: np.ndarray) -> np.ndarray:
    c = np.asarray(params["colors"], dtype=np.float64)
    period = params["period"]
    phase = params["phase"]
    n = pts.shape[0]
    out = np.empty((n, 3))
    if prog == "blocks":
        base = {"torso": c[0], "arm": c[1], "leg": c[2]}.get(part_key, c[0])
        out[:] = base
    elif prog == "h_stripes":
        sel = np.sin(2 * np.pi * pts[:, 1] / period + phase) > 0
        if part_key == "leg":
            out[:] = c[2]
        else:
            out[:] = np.where(sel[:, None], c[0], c[1])
    elif prog == "v_stripes":
        sel = np.sin(2 * np.pi * pts[:, 0] / period + phase) > 0
        if part_key == "leg":
            out[:] = c[2]
        else:
            out[:] = np.where(sel[:, None], c[0], c[1])
    elif prog == "checker":
        sel = (np.sin(2 * np.pi * pts[:, 0] / period + phase)
               * np.sin(2 * np.pi * pts[:, 1] / period)) > 0
        if part_key == "leg":
            out[:] = c[2]
        else:
            out[:] = np.where(sel[:, None], c[0], c[1])
    else:
        raise ValueError(f"unknown texture program '{prog}'")
    return out


def generate_subject(spec: ProceduralBodySpec,
                     skeleton: Skeleton | None = None):
    """Expand a spec into (TexturedTemplate, Skeleton, SkinningField).

    The template lives in the subject's own canonical pose (A-pose at the
    subject's bone scales).
    """
    skeleton = skeleton or default_human_skeleton()
    pose = PoseParams.canonical(skeleton, beta=spec.beta)
    R_glob, joints = fk_frames(skeleton, pose.theta, pose.beta)

    name_to_idx = {n: i for i, n in enumerate(skeleton.names)}
    all_v, all_f, all_c = [], [], []
    offset = 0
    for from_name, to_name, rkey, ell in _BODY_PARTS:
        j0 = name_to_idx[from_name]
        p0 = joints[j0]
        if to_name is None:
            p1 = joints[j0] + R_glob[j0] @ (spec.beta[j0] * skeleton.tips[j0])
        else:
            p1 = joints[name_to_idx[to_name]]
        radius = skeleton.radii[j0] * spec.radius_scales[
            rkey if rkey in spec.radius_scales else "torso"]
        radius *= spec.beta[j0] ** 0.5  # thicker limbs on larger bones
        v, f = _capsule(p0, p1, radius, ell, spec.mesh_segments)
        part = rkey if from_name not in _SKIN_PARTS else "skin"
        skin = np.asarray(spec.texture_params["skin"])
        if part == "skin":
            col = np.tile(skin, (len(v), 1))
        else:
            col = _program_colors(spec.texture_program, spec.texture_params,
                                  v, rkey, skin)
        all_v.append(v)
        all_f.append(f + offset)
        all_c.append(col)
        offset += len(v)

    verts = np.concatenate(all_v)
    faces = np.concatenate(all_f)
    colors = np.concatenate(all_c)
    noise = _smooth_noise(verts, spec.texture_params["noise_seed"])
    colors = np.clip(colors * (1.0 + spec.texture_params["noise_amp"] * noise[:, None]),
                     0.0, 1.0)
    normals = mesh_vertex_normals(verts, faces)
    template = TexturedTemplate(verts, faces, colors, normals)
    field = diffuse_skinning(verts, skeleton, pose=pose)
    return template, skeleton, field
