"""Synthetic multi-view corpus generation: the stand-in for studio capture.

Directory layout (documented in manifest.json):

    out/
      manifest.json                  corpus-level metadata + subject list
      skeleton.json                  shared rig
      subjects/s###/
        template.npz                 normalized canonical template (or raw
                                     when normalization is disabled)
        template_raw.npz             subject-scale template (ground truth)
        skinning.npz                 weight field of template.npz
        skinning_raw.npz             weight field of template_raw.npz
        maps.npz                     CanonicalMapSet baked from template.npz
        pixel_weights.npz            per-map-pixel skinning weights
        poses.json                   beta + per-frame theta/root
        cameras.json                 rig
        gt/cam##/frame####.png       RGBA ground-truth renders
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ContractError
from ..parameterization import bake_maps, pixel_skinning_weights
from ..pngio import save_rgba
from ..skeleton import PoseParams, Skeleton, default_human_skeleton
from ..skinning import SkinningField
from ..splat.types import Camera, save_cameras
from ..templates import normalize_template
from .body import ProceduralBodySpec, generate_subject
from .meshrender import render_ground_truth

MANIFEST_FORMAT = "gsavatar-corpus"
MANIFEST_VERSION = 1

# joints allowed to move in random sequences, with per-joint amplitude (rad)
_MOTION_AMPLITUDE = {
    "spine": 0.10, "chest": 0.10, "neck": 0.12, "head": 0.10,
    "l_upper_arm": 0.45, "l_fore_arm": 0.55, "l_hand": 0.2,
    "r_upper_arm": 0.45, "r_fore_arm": 0.55, "r_hand": 0.2,
    "l_thigh": 0.35, "l_shin": 0.5, "l_foot": 0.2,
    "r_thigh": 0.35, "r_shin": 0.5, "r_foot": 0.2,
}
JOINT_ANGLE_BOUND = 2.0


def camera_ring(n_cams: int, image_size: int, radius: float = 2.6,
                center=(0.0, -0.1, 0.0), height: float = 0.0,
                fov_deg: float = 45.0, start_angle: float = 0.0) -> list[Camera]:
    """Cameras on a horizontal ring, all aimed at the body center.

    The first camera sits in front of the body (+z side)."""
    cams = []
    for k in range(n_cams):
        ang = start_angle + 2.0 * np.pi * k / n_cams
        eye = np.array([center[0] + radius * np.sin(ang),
                        center[1] + height,
                        center[2] + radius * np.cos(ang)])
        cams.append(Camera.look_at(eye, center, fov_deg=fov_deg,
                                   width=image_size, height=image_size))
    return cams


def pose_sequence(skeleton: Skeleton, beta: np.ndarray, n_frames: int,
                  seed: int, root_motion: bool = True) -> list[PoseParams]:
    """Band-limited random joint trajectories; frame 0 is the canonical pose."""
    rng = np.random.default_rng(seed)
    J = skeleton.n_joints
    n_waves = 3
    amp = np.zeros((J, 3))
    for j, name in enumerate(skeleton.names):
        amp[j] = _MOTION_AMPLITUDE.get(name, 0.0)
    a = rng.uniform(-1.0, 1.0, (n_waves, J, 3)) * amp[None] / n_waves * 1.6
    freq = rng.uniform(0.5, 2.0, (n_waves, J, 3))
    phase = rng.uniform(0.0, 2 * np.pi, (n_waves, J, 3))

    def theta_at(t):
        ph = 2 * np.pi * freq * t + phase
        th = (a * np.sin(ph)).sum(axis=0)
        return th

    base = theta_at(0.0)
    poses = []
    for f in range(n_frames):
        t = f / max(n_frames, 1)
        theta = np.clip(theta_at(t) - base, -JOINT_ANGLE_BOUND + 1e-3,
                        JOINT_ANGLE_BOUND - 1e-3)
        if root_motion and f > 0:
            yaw = 0.25 * np.sin(2 * np.pi * t + float(phase[0, 0, 0]))
            root_rot = np.array([0.0, yaw, 0.0])
            root_tr = np.array([0.05 * np.sin(4 * np.pi * t),
                                0.02 * np.sin(6 * np.pi * t), 0.0])
        else:
            root_rot = np.zeros(3)
            root_tr = np.zeros(3)
        poses.append(PoseParams(theta=theta, beta=beta.copy(),
                                root_rotation=root_rot, root_translation=root_tr))
    return poses


def save_poses(path, poses: list[PoseParams]):
    doc = {
        "beta": poses[0].beta.tolist(),
        "frames": [{
            "theta": p.theta.tolist(),
            "root_rotation": p.root_rotation.tolist(),
            "root_translation": p.root_translation.tolist(),
        } for p in poses],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_poses(path) -> list[PoseParams]:
    with open(path) as f:
        doc = json.load(f)
    beta = np.asarray(doc["beta"], dtype=np.float64)
    return [PoseParams(theta=np.asarray(fr["theta"]), beta=beta.copy(),
                       root_rotation=np.asarray(fr["root_rotation"]),
                       root_translation=np.asarray(fr["root_translation"]))
            for fr in doc["frames"]]


def generate_corpus(out_dir, n_subjects: int, n_frames: int, n_cams: int,
                    seed: int, map_resolution: int = 128, image_size: int = 256,
                    normalize: bool = True, subject_seed_offset: int = 0,
                    mesh_segments: int = 16, displacement: bool = True) -> dict:
    """Generate subjects, conditioning maps, poses, cameras, and gt renders.

    Returns the manifest dict (also written to manifest.json).
    """
    if min(n_subjects, n_frames, n_cams) < 1:
        raise ContractError("generate_corpus: counts must be >= 1")
    out = Path(out_dir)
    (out / "subjects").mkdir(parents=True, exist_ok=True)
    skeleton = default_human_skeleton()
    skeleton.save(out / "skeleton.json")

    subjects = []
    for si in range(n_subjects):
        sid = f"s{si:03d}"
        sdir = out / "subjects" / sid
        (sdir / "gt").mkdir(parents=True, exist_ok=True)
        spec = ProceduralBodySpec.sample(seed + subject_seed_offset + si * 1013,
                                         skeleton, mesh_segments=mesh_segments)
        raw_tpl, _, raw_field = generate_subject(spec, skeleton)
        raw_tpl.save(sdir / "template_raw.npz")
        raw_field.save(sdir / "skinning_raw.npz")

        if normalize:
            tpl, field = normalize_template(raw_tpl, spec.beta, skeleton,
                                            field=raw_field)
        else:
            tpl, field = raw_tpl, raw_field
        tpl.save(sdir / "template.npz")
        field.save(sdir / "skinning.npz")

        maps = bake_maps(tpl, map_resolution)
        maps.save(sdir / "maps.npz")
        pw = pixel_skinning_weights(maps, field)
        np.savez_compressed(sdir / "pixel_weights.npz",
                            weights=pw.astype(np.float32))

        poses = pose_sequence(skeleton, spec.beta, n_frames,
                              seed=seed + 77 + si)
        save_poses(sdir / "poses.json", poses)
        cams = camera_ring(n_cams, image_size)
        save_cameras(sdir / "cameras.json", cams)

        source = PoseParams.canonical(skeleton, beta=spec.beta)
        for ci, cam in enumerate(cams):
            cdir = sdir / "gt" / f"cam{ci:02d}"
            cdir.mkdir(exist_ok=True)
            for fi, pose in enumerate(poses):
                tgt = render_ground_truth(raw_tpl, raw_field, pose, cam,
                                          skeleton, source=source,
                                          displacement=displacement)
                save_rgba(cdir / f"frame{fi:04d}.png", tgt.rgb, tgt.alpha)
        subjects.append({"id": sid, "dir": f"subjects/{sid}",
                         "spec": spec.to_dict(), "n_frames": n_frames,
                         "n_cams": n_cams})

    manifest = {
        "format": MANIFEST_FORMAT, "version": MANIFEST_VERSION,
        "seed": seed, "n_subjects": n_subjects, "n_frames": n_frames,
        "n_cams": n_cams, "map_resolution": map_resolution,
        "image_size": image_size, "normalized": normalize,
        "displacement": displacement,
        "subjects": subjects,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest
