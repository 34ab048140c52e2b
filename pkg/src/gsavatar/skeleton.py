"""Articulated skeleton: pose parameters, forward kinematics, bone
transforms relative to the canonical pose, and skeleton-scale handling.

Conventions. A skeleton is a tree of joints; joint j's offset is expressed
in its parent's frame. The per-bone scale beta[j] scales joint j's
*outgoing* segments: child offsets of j are stretched by beta[j], and the
skinning transform of joint j applies the same uniform scale about the
joint. With that pairing, both transforms adjacent to a joint map the
joint location identically, so LBS-based retargeting moves joints exactly
onto the target skeleton regardless of how the blend weights split.

The canonical pose (theta_cano) is all-zero; the A-pose (arms lowered
about 45 degrees) is baked into the rest offsets of the default human rig.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError, ShapeError

SKELETON_FORMAT = "gsavatar-skeleton"
SKELETON_VERSION = 1


# ---------------------------------------------------------------------------
# rotation helpers


def rodrigues(aa: np.ndarray) -> np.ndarray:
    """Axis-angle vectors (...,3) to rotation matrices (...,3,3)."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    small = theta < 1e-12
    axis = np.where(small, 0.0, aa / np.where(small, 1.0, theta))
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    K = np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1),
    ], axis=-2)
    th = theta[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    R = eye + np.sin(th) * K + (1.0 - np.cos(th)) * (K @ K)
    return R


def canonicalize_axis_angle(aa: np.ndarray) -> np.ndarray:
    """Wrap rotation angles into [0, pi), flipping the axis as needed."""
    aa = np.asarray(aa, dtype=np.float64)
    theta = np.linalg.norm(aa, axis=-1, keepdims=True)
    wrapped = np.mod(theta + np.pi, 2.0 * np.pi) - np.pi
    scale = np.where(theta < 1e-12, 0.0, wrapped / np.where(theta < 1e-12, 1.0, theta))
    return aa * scale


def geodesic_angle(aa_a: np.ndarray, aa_b: np.ndarray) -> np.ndarray:
    """Rotation angle (radians) between two axis-angle arrays, per row."""
    Ra = rodrigues(aa_a)
    Rb = rodrigues(aa_b)
    rel = np.matmul(np.swapaxes(Ra, -1, -2), Rb)
    tr = rel[..., 0, 0] + rel[..., 1, 1] + rel[..., 2, 2]
    return np.arccos(np.clip((tr - 1.0) * 0.5, -1.0, 1.0))


# ---------------------------------------------------------------------------
# skeleton and pose types


@dataclass
class Skeleton:
    """Joint tree with rest offsets (meters), bone radii, and leaf tips."""

    names: list[str]
    parents: np.ndarray          # (J,) int, -1 for the root
    offsets: np.ndarray          # (J,3) float64, offset in parent frame
    radii: np.ndarray            # (J,) float64, radius of j's outgoing bone
    tips: np.ndarray             # (J,3) float64, local tip for leaf joints
    children: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.tips = np.asarray(self.tips, dtype=np.float64)
        J = self.n_joints
        if not (len(self.names) == self.parents.shape[0] == self.offsets.shape[0]):
            raise ShapeError("skeleton: inconsistent joint counts")
        if (self.parents[0] != -1) or np.any(self.parents[1:] < 0) \
                or np.any(self.parents[1:] >= np.arange(1, J)):
            raise DataError("skeleton: joints must be topologically ordered with root first")
        if not np.isfinite(self.offsets).all():
            raise DataError("skeleton: non-finite rest offsets")
        self.children = [[] for _ in range(J)]
        for j in range(1, J):
            self.children[self.parents[j]].append(j)

    @property
    def n_joints(self) -> int:
        return len(self.names)

    def save(self, path):
        doc = {
            "format": SKELETON_FORMAT,
            "version": SKELETON_VERSION,
            "joints": [
                {
                    "name": self.names[j],
                    "parent": int(self.parents[j]),
                    "offset": [float(v) for v in self.offsets[j]],
                    "radius": float(self.radii[j]),
                    "tip": [float(v) for v in self.tips[j]],
                }
                for j in range(self.n_joints)
            ],
            "canonical_pose": [[0.0, 0.0, 0.0]] * self.n_joints,
        }
        with open(path, "w") as f:
            json.dump(doc, f, indent=1)

    @classmethod
    def load(cls, path) -> "Skeleton":
        with open(path) as f:
            doc = json.load(f)
        if doc.get("format") != SKELETON_FORMAT:
            raise DataError(f"{path}: not a skeleton file")
        if doc.get("version") != SKELETON_VERSION:
            raise DataError(f"{path}: unsupported skeleton version {doc.get('version')}")
        joints = doc["joints"]
        return cls(
            names=[j["name"] for j in joints],
            parents=np.array([j["parent"] for j in joints]),
            offsets=np.array([j["offset"] for j in joints]),
            radii=np.array([j["radius"] for j in joints]),
            tips=np.array([j["tip"] for j in joints]),
        )


@dataclass
class PoseParams:
    """Per-frame joint rotations, per-bone scales, and the root transform."""

    theta: np.ndarray                     # (J,3) axis-angle, radians
    beta: np.ndarray                      # (J,) bone scales, 1 = average
    root_rotation: np.ndarray = None      # (3,) axis-angle
    root_translation: np.ndarray = None   # (3,) meters

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.root_rotation is None:
            self.root_rotation = np.zeros(3)
        if self.root_translation is None:
            self.root_translation = np.zeros(3)
        self.root_rotation = np.asarray(self.root_rotation, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        if np.any(self.beta <= 0):
            raise ContractError("PoseParams: beta must be positive")
        if np.any(np.linalg.norm(self.theta, axis=-1) >= np.pi + 1e-9):
            self.theta = canonicalize_axis_angle(self.theta)

    def copy(self) -> "PoseParams":
        return PoseParams(self.theta.copy(), self.beta.copy(),
                          self.root_rotation.copy(), self.root_translation.copy())

    @classmethod
    def canonical(cls, skeleton: Skeleton, beta=None) -> "PoseParams":
        J = skeleton.n_joints
        b = np.ones(J) if beta is None else np.asarray(beta, dtype=np.float64) * np.ones(J)
        return cls(theta=np.zeros((J, 3)), beta=b)


# ---------------------------------------------------------------------------
# forward kinematics


def fk_frames(skeleton: Skeleton, theta: np.ndarray, beta: np.ndarray):
    """Global rigid joint frames (R (J,3,3), t (J,3)), root transform excluded."""
    J = skeleton.n_joints
    theta = np.asarray(theta, dtype=np.float64).reshape(J, 3)
    beta = np.asarray(beta, dtype=np.float64).reshape(J)
    R_local = rodrigues(theta)
    R = np.empty((J, 3, 3))
    t = np.empty((J, 3))
    R[0] = R_local[0]
    t[0] = skeleton.offsets[0]
    for j in range(1, J):
        p = skeleton.parents[j]
        R[j] = R[p] @ R_local[j]
        t[j] = R[p] @ (beta[p] * skeleton.offsets[j]) + t[p]
    return R, t


def joint_positions(skeleton: Skeleton, pose: PoseParams) -> np.ndarray:
    """World-space joint positions including the root transform."""
    _, t = fk_frames(skeleton, pose.theta, pose.beta)
    Rr = rodrigues(pose.root_rotation)
    return t @ Rr.T + pose.root_translation


def bone_transforms(skeleton: Skeleton, pose: PoseParams,
                    source: PoseParams | None = None) -> np.ndarray:
    """Per-joint 4x4 transforms mapping source-pose space to posed space.

    `source` defaults to the canonical pose at average scale (beta=1) with
    an identity root, so the default result deforms canonical points; at
    pose == canonical the result is the identity stack.
    """
    J = skeleton.n_joints
    if pose.theta.shape != (J, 3) or pose.beta.shape != (J,):
        raise ShapeError("bone_transforms: pose dimensions do not match skeleton")
    if source is None:
        source = PoseParams.canonical(skeleton)

    Rt, tt = fk_frames(skeleton, pose.theta, pose.beta)
    Rs, ts = fk_frames(skeleton, source.theta, source.beta)
    s = pose.beta / source.beta  # uniform per-bone scale about the joint

    # B = Root_t . G_t . S . G_s^{-1} . Root_s^{-1}, all rigid except S
    Rr_t = rodrigues(pose.root_rotation)
    Rr_s = rodrigues(source.root_rotation)

    A = np.einsum("ab,jbc->jac", Rr_t, Rt) * s[:, None, None]   # (J,3,3)
    t_t = tt @ Rr_t.T + pose.root_translation                    # (J,3)
    # inverse of source: x -> Rs^T (Rr_s^T (x - tr_s) - ts)
    B = np.zeros((J, 4, 4))
    M = np.einsum("jab,jcb->jac", A, Rs)                         # A Rs^T
    MW = np.einsum("jab,cb->jac", M, Rr_s)                       # A Rs^T Rr_s^T
    B[:, :3, :3] = MW
    offs = -np.einsum("jab,jb->ja", M, ts) \
        - np.einsum("jab,b->ja", MW, source.root_translation) + t_t
    B[:, :3, 3] = offs
    B[:, 3, 3] = 1.0
    return B


def bone_segments(skeleton: Skeleton, pose: PoseParams) -> np.ndarray:
    """Bone segments (J,2,3): joint position to tip, root transform included.

    The tip of joint j is the mean of its children (scaled by beta[j]);
    for leaves it is the stored local tip offset.
    """
    R, t = fk_frames(skeleton, pose.theta, pose.beta)
    J = skeleton.n_joints
    seg = np.empty((J, 2, 3))
    for j in range(J):
        kids = skeleton.children[j]
        if kids:
            local = np.mean([skeleton.offsets[c] for c in kids], axis=0)
        else:
            local = skeleton.tips[j]
        seg[j, 0] = t[j]
        seg[j, 1] = t[j] + R[j] @ (pose.beta[j] * local)
    Rr = rodrigues(pose.root_rotation)
    return seg @ Rr.T + pose.root_translation


def select_keyframe(pose_sequence: list[PoseParams]) -> int:
    """Index of the frame closest to the canonical pose.

    Distance is the sum of per-joint geodesic rotation angles to the
    all-zero canonical pose; the root transform is ignored. Ties resolve
    to the lowest index.
    """
    if not pose_sequence:
        raise ContractError("select_keyframe: empty pose sequence")
    dists = np.array([
        geodesic_angle(p.theta, np.zeros_like(p.theta)).sum() for p in pose_sequence
    ])
    return int(np.argmin(dists))


# ---------------------------------------------------------------------------
# manual adjoints (used by pose refinement and fine-tuning)


def _local_rotation_grads(theta_j: np.ndarray, dR_local: np.ndarray) -> np.ndarray:
    """d(loss)/d(axis-angle) from d(loss)/d(R_local), by central differences."""
    eps = 1e-6
    g = np.zeros(3)
    for k in range(3):
        tp = theta_j.copy(); tp[k] += eps
        tm = theta_j.copy(); tm[k] -= eps
        dR = (rodrigues(tp) - rodrigues(tm)) / (2 * eps)
        g[k] = float((dR_local * dR).sum())
    return g


@dataclass
class PoseGrads:
    theta: np.ndarray
    beta: np.ndarray
    root_rotation: np.ndarray
    root_translation: np.ndarray


def pose_grads(skeleton: Skeleton, pose: PoseParams,
               dB: np.ndarray | None = None,
               d_joint_pos: np.ndarray | None = None,
               source: PoseParams | None = None) -> PoseGrads:
    """Backpropagate through bone_transforms / joint_positions.

    `dB` is d(loss)/d(B) of shape (J,4,4) (last row ignored) for the
    transforms returned by `bone_transforms(skeleton, pose, source)`;
    `d_joint_pos` is d(loss)/d(world joint positions) of shape (J,3).
    Either or both may be given. The source pose is treated as constant.
    """
    J = skeleton.n_joints
    if source is None:
        source = PoseParams.canonical(skeleton)
    Rt, tt = fk_frames(skeleton, pose.theta, pose.beta)
    Rs, ts = fk_frames(skeleton, source.theta, source.beta)
    Rr = rodrigues(pose.root_rotation)
    s = pose.beta / source.beta

    gR = np.zeros((J, 3, 3))   # d/d(global joint rotation), root excluded
    gt = np.zeros((J, 3))      # d/d(global joint translation), root excluded
    gRoot = np.zeros((3, 3))
    gtrans = np.zeros(3)
    gbeta = np.zeros(J)

    if d_joint_pos is not None:
        d_joint_pos = np.asarray(d_joint_pos, dtype=np.float64)
        # p = Rr t + trans
        gRoot += np.einsum("ja,jb->ab", d_joint_pos, tt)
        gtrans += d_joint_pos.sum(axis=0)
        gt += d_joint_pos @ Rr

    if dB is not None:
        dB = np.asarray(dB, dtype=np.float64)
        dB_R = dB[:, :3, :3]
        dB_t = dB[:, :3, 3]
        # Factor B as: B_R = Rr X Q,  B_t = Rr (tt - X v) + trans, with
        # X = Rt*s, constant Q = Rs^T Rr_s^T and v = Rs^T (ts + Rr_s^T trans_s)
        Rr_s = rodrigues(source.root_rotation)
        X = Rt * s[:, None, None]
        Q = np.einsum("jba,cb->jac", Rs, Rr_s)
        v = np.einsum("jba,jb->ja", Rs, ts + source.root_translation @ Rr_s)
        XQ = np.matmul(X, Q)
        P_t = tt - np.einsum("jab,jb->ja", X, v)
        gRoot += np.einsum("jab,jcb->ac", dB_R, XQ) + np.einsum("ja,jb->ab", dB_t, P_t)
        gtrans += dB_t.sum(axis=0)
        gP_t = dB_t @ Rr                                  # Rr^T dB_t per row
        gX = np.einsum("ba,jbc,jdc->jad", Rr, dB_R, Q) \
            - np.einsum("ja,jb->jab", gP_t, v)
        gt += gP_t
        gR += gX * s[:, None, None]
        gbeta += np.einsum("jab,jab->j", gX, Rt) / source.beta

    # FK adjoint, reverse topological order
    R_local = rodrigues(pose.theta)
    gtheta = np.zeros((J, 3))
    for j in range(J - 1, 0, -1):
        p = skeleton.parents[j]
        off = skeleton.offsets[j]
        gR[p] += gR[j] @ R_local[j].T + np.einsum(
            "a,b->ab", gt[j], pose.beta[p] * off)
        gt[p] += gt[j]
        gbeta[p] += float(gt[j] @ (Rt[p] @ off))
        dR_local = Rt[p].T @ gR[j]
        gtheta[j] = _local_rotation_grads(pose.theta[j], dR_local)
    gtheta[0] = _local_rotation_grads(pose.theta[0], gR[0])

    groot = _local_rotation_grads(pose.root_rotation, gRoot)
    return PoseGrads(gtheta, gbeta, groot, gtrans)


# ---------------------------------------------------------------------------
# default humanoid rig (A-pose baked into the rest offsets)

_HUMAN_JOINTS = [
    # name, parent, offset, radius, tip
    ("pelvis", -1, (0.0, 0.0, 0.0), 0.13, (0.0, 0.1, 0.0)),
    ("spine", 0, (0.0, 0.15, 0.0), 0.125, None),
    ("chest", 1, (0.0, 0.15, 0.0), 0.13, None),
    ("neck", 2, (0.0, 0.13, 0.0), 0.05, None),
    ("head", 3, (0.0, 0.08, 0.0), 0.10, (0.0, 0.20, 0.0)),
    ("l_upper_arm", 2, (0.19, 0.11, 0.0), 0.045, None),
    ("l_fore_arm", 5, (0.19, -0.19, 0.0), 0.04, None),
    ("l_hand", 6, (0.17, -0.17, 0.0), 0.04, (0.08, -0.08, 0.0)),
    ("r_upper_arm", 2, (-0.19, 0.11, 0.0), 0.045, None),
    ("r_fore_arm", 8, (-0.19, -0.19, 0.0), 0.04, None),
    ("r_hand", 9, (-0.17, -0.17, 0.0), 0.04, (-0.08, -0.08, 0.0)),
    ("l_thigh", 0, (0.09, -0.04, 0.0), 0.07, None),
    ("l_shin", 11, (0.0, -0.42, 0.0), 0.055, None),
    ("l_foot", 12, (0.0, -0.40, 0.0), 0.05, (0.0, -0.05, 0.14)),
    ("r_thigh", 0, (-0.09, -0.04, 0.0), 0.07, None),
    ("r_shin", 14, (0.0, -0.42, 0.0), 0.055, None),
    ("r_foot", 15, (0.0, -0.40, 0.0), 0.05, (0.0, -0.05, 0.14)),
]


def default_human_skeleton() -> Skeleton:
    """17-joint capsule-human rig in a canonical A-pose."""
    names, parents, offsets, radii, tips = [], [], [], [], []
    for name, parent, off, rad, tip in _HUMAN_JOINTS:
        names.append(name)
        parents.append(parent)
        offsets.append(off)
        radii.append(rad)
        tips.append(tip if tip is not None else (0.0, 0.0, 0.0))
    return Skeleton(names, np.array(parents), np.array(offsets),
                    np.array(radii), np.array(tips))
