"""Skeleton FK, bone transforms, keyframe selection, and pose adjoints."""

import numpy as np
import pytest

from gsavatar.errors import ContractError, DataError
from gsavatar.skeleton import (PoseParams, Skeleton, bone_transforms,
                               canonicalize_axis_angle, default_human_skeleton,
                               fk_frames, geodesic_angle, joint_positions,
                               pose_grads, rodrigues, select_keyframe)


def three_joint_chain():
    # root at origin, two links of 1m along +x
    return Skeleton(
        names=["a", "b", "c"],
        parents=np.array([-1, 0, 1]),
        offsets=np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 0, 0]]),
        radii=np.array([0.1, 0.1, 0.1]),
        tips=np.array([[0.0, 0, 0], [0.0, 0, 0], [0.5, 0, 0]]),
    )


def test_identity_at_canonical_pose():
    skel = default_human_skeleton()
    B = bone_transforms(skel, PoseParams.canonical(skel))
    assert np.allclose(B, np.eye(4)[None], atol=1e-14)


def test_root_translation_only():
    skel = default_human_skeleton()
    pose = PoseParams.canonical(skel)
    pose.root_translation = np.array([0.3, -0.1, 2.0])
    B = bone_transforms(skel, pose)
    expect = np.eye(4)
    expect[:3, 3] = pose.root_translation
    assert np.allclose(B, expect[None], atol=1e-12)


def test_elbow_bend_matches_hand_fk():
    # rotate joint b by 90 deg about +z: c moves from (2,0,0) to (1,1,0)
    skel = three_joint_chain()
    theta = np.zeros((3, 3))
    theta[1] = [0, 0, np.pi / 2]
    pose = PoseParams(theta=theta, beta=np.ones(3))
    pos = joint_positions(skel, pose)
    assert np.allclose(pos[0], [0, 0, 0], atol=1e-12)
    assert np.allclose(pos[1], [1, 0, 0], atol=1e-12)
    assert np.allclose(pos[2], [1, 1, 0], atol=1e-12)


def test_beta_scales_bone_lengths():
    skel = three_joint_chain()
    pose = PoseParams(theta=np.zeros((3, 3)), beta=np.array([2.0, 3.0, 1.0]))
    pos = joint_positions(skel, pose)
    # offset of b scaled by beta[a]=2, offset of c scaled by beta[b]=3
    assert np.allclose(pos[1], [2, 0, 0], atol=1e-12)
    assert np.allclose(pos[2], [5, 0, 0], atol=1e-12)


def test_global_rigid_equivariance():
    skel = default_human_skeleton()
    rng = np.random.default_rng(0)
    pose = PoseParams(theta=rng.normal(0, 0.3, (17, 3)), beta=np.ones(17))
    B = bone_transforms(skel, pose)
    pose_g = pose.copy()
    pose_g.root_rotation = np.array([0.3, -0.2, 0.9])
    pose_g.root_translation = np.array([1.0, 2.0, -0.5])
    Bg = bone_transforms(skel, pose_g)

    G = np.eye(4)
    G[:3, :3] = rodrigues(pose_g.root_rotation)
    G[:3, 3] = pose_g.root_translation
    x = rng.normal(0, 0.5, 3)
    for j in range(17):
        xd = B[j, :3, :3] @ x + B[j, :3, 3]
        xg = Bg[j, :3, :3] @ x + Bg[j, :3, 3]
        assert np.allclose(xg, G[:3, :3] @ xd + G[:3, 3], atol=1e-9)


def test_bone_transform_rotation_orthonormal_at_unit_beta():
    skel = default_human_skeleton()
    rng = np.random.default_rng(1)
    pose = PoseParams(theta=rng.normal(0, 0.5, (17, 3)), beta=np.ones(17))
    B = bone_transforms(skel, pose)
    for j in range(17):
        R = B[j, :3, :3]
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-5)


def test_source_pose_roundtrip():
    # transforming from a scaled source back to itself is the identity
    skel = default_human_skeleton()
    src = PoseParams.canonical(skel, beta=1.3)
    B = bone_transforms(skel, src, source=src)
    assert np.allclose(B, np.eye(4)[None], atol=1e-12)


def test_keyframe_selection():
    skel = default_human_skeleton()
    J = skel.n_joints

    def pose_with(angle):
        theta = np.zeros((J, 3))
        theta[5, 2] = angle
        return PoseParams(theta=theta, beta=np.ones(J))

    seq = [pose_with(0.8), pose_with(0.2), pose_with(0.5)]
    assert select_keyframe(seq) == 1
    seq = [pose_with(0.7), pose_with(0.7)]
    assert select_keyframe(seq) == 0  # tie -> lowest index
    assert select_keyframe([pose_with(1.0)]) == 0
    exact = [pose_with(0.3), pose_with(0.1), pose_with(0.2), PoseParams.canonical(skel)]
    assert select_keyframe(exact) == 3
    with pytest.raises(ContractError):
        select_keyframe([])


def test_geodesic_distance_values():
    a = np.array([[0, 0, 0.8]])
    b = np.array([[0, 0, 0.0]])
    assert np.isclose(geodesic_angle(a, b)[0], 0.8, atol=1e-9)


def test_canonicalize_axis_angle():
    aa = np.array([[0, 0, 3 * np.pi / 2]])
    out = canonicalize_axis_angle(aa)
    assert np.isclose(np.linalg.norm(out), np.pi / 2, atol=1e-9)
    assert out[0, 2] < 0  # flipped direction
    assert np.linalg.norm(canonicalize_axis_angle(np.zeros((1, 3)))) == 0.0


def test_skeleton_file_roundtrip(tmp_path):
    skel = default_human_skeleton()
    path = tmp_path / "rig.json"
    skel.save(path)
    loaded = Skeleton.load(path)
    assert loaded.names == skel.names
    assert np.array_equal(loaded.parents, skel.parents)
    assert np.allclose(loaded.offsets, skel.offsets)
    with pytest.raises(DataError):
        bad = tmp_path / "bad.json"
        bad.write_text('{"format": "other"}')
        Skeleton.load(bad)


def test_skeleton_validation():
    with pytest.raises(DataError):
        Skeleton(["a", "b"], np.array([-1, 5]), np.zeros((2, 3)),
                 np.ones(2), np.zeros((2, 3)))


# ---------------------------------------------------------------------------
# pose_grads against finite differences


def _fd_pose_grads(skel, pose, loss_fn, eps=1e-6):
    def value(p):
        return loss_fn(p)

    g_theta = np.zeros_like(pose.theta)
    for j in range(pose.theta.shape[0]):
        for k in range(3):
            pp, pm = pose.copy(), pose.copy()
            pp.theta[j, k] += eps
            pm.theta[j, k] -= eps
            g_theta[j, k] = (value(pp) - value(pm)) / (2 * eps)
    g_beta = np.zeros_like(pose.beta)
    for j in range(pose.beta.shape[0]):
        pp, pm = pose.copy(), pose.copy()
        pp.beta[j] += eps
        pm.beta[j] -= eps
        g_beta[j] = (value(pp) - value(pm)) / (2 * eps)
    g_rr = np.zeros(3)
    g_rt = np.zeros(3)
    for k in range(3):
        pp, pm = pose.copy(), pose.copy()
        pp.root_rotation[k] += eps
        pm.root_rotation[k] -= eps
        g_rr[k] = (value(pp) - value(pm)) / (2 * eps)
        pp, pm = pose.copy(), pose.copy()
        pp.root_translation[k] += eps
        pm.root_translation[k] -= eps
        g_rt[k] = (value(pp) - value(pm)) / (2 * eps)
    return g_theta, g_beta, g_rr, g_rt


def test_pose_grads_joint_positions():
    skel = default_human_skeleton()
    rng = np.random.default_rng(3)
    pose = PoseParams(theta=rng.normal(0, 0.3, (17, 3)),
                      beta=rng.uniform(0.9, 1.1, 17),
                      root_rotation=np.array([0.1, 0.4, -0.2]),
                      root_translation=np.array([0.5, 0.0, 1.0]))
    W = rng.normal(0, 1, (17, 3))  # random linear functional of positions

    def loss(p):
        return float((joint_positions(skel, p) * W).sum())

    g = pose_grads(skel, pose, d_joint_pos=W)
    ft, fb, frr, frt = _fd_pose_grads(skel, pose, loss)
    assert np.allclose(g.theta, ft, atol=1e-5)
    assert np.allclose(g.beta, fb, atol=1e-5)
    assert np.allclose(g.root_rotation, frr, atol=1e-5)
    assert np.allclose(g.root_translation, frt, atol=1e-5)


def test_pose_grads_bone_transforms():
    skel = default_human_skeleton()
    rng = np.random.default_rng(4)
    pose = PoseParams(theta=rng.normal(0, 0.3, (17, 3)),
                      beta=rng.uniform(0.9, 1.1, 17),
                      root_rotation=np.array([-0.2, 0.1, 0.3]),
                      root_translation=np.array([0.0, 0.2, 0.8]))
    source = PoseParams.canonical(skel, beta=rng.uniform(0.9, 1.1, 17))
    W = rng.normal(0, 1, (17, 4, 4))
    W[:, 3, :] = 0.0  # bottom row is constant

    def loss(p):
        return float((bone_transforms(skel, p, source=source) * W).sum())

    g = pose_grads(skel, pose, dB=W, source=source)
    ft, fb, frr, frt = _fd_pose_grads(skel, pose, loss)
    assert np.allclose(g.theta, ft, atol=1e-5)
    assert np.allclose(g.beta, fb, atol=1e-5)
    assert np.allclose(g.root_rotation, frr, atol=1e-5)
    assert np.allclose(g.root_translation, frt, atol=1e-5)
