"""Skinning weights (brute-force RBF oracle) and LBS blending."""

import numpy as np
import pytest

from gsavatar.errors import ContractError
from gsavatar.skeleton import PoseParams, bone_segments, default_human_skeleton, rodrigues
from gsavatar.skinning import (SkinningField, bone_weights, deform_covs,
                               deform_points, diffuse_skinning, lbs_blend,
                               segment_distances)


def test_weight_on_isolated_bone_midpoint():
    # long sparse chain: each bone midpoint is far from every other bone
    from gsavatar.skeleton import Skeleton
    skel = Skeleton(
        names=["a", "b", "c"],
        parents=np.array([-1, 0, 1]),
        offsets=np.array([[0.0, 0, 0], [2.0, 0, 0], [2.0, 0, 0]]),
        radii=np.array([0.05, 0.05, 0.05]),
        tips=np.array([[0.0, 0, 0], [0.0, 0, 0], [1.0, 0, 0]]),
    )
    segs = bone_segments(skel, PoseParams.canonical(skel))
    mid = segs[1].mean(axis=0)
    w = bone_weights(mid[None], segs, skel.radii)
    assert w[0, 1] > 0.95


def test_symmetric_point_splits_evenly():
    skel = default_human_skeleton()
    pose = PoseParams.canonical(skel)
    segs = bone_segments(skel, pose)
    jl, jr = skel.names.index("l_thigh"), skel.names.index("r_thigh")
    # point on the symmetry plane between the two thighs
    p = 0.5 * (segs[jl].mean(axis=0) + segs[jr].mean(axis=0))
    w = bone_weights(p[None], segs, skel.radii)
    assert np.isclose(w[0, jl], w[0, jr], atol=1e-9)
    assert w[0, jl] > 0.1


def test_partition_of_unity_and_bruteforce_oracle():
    skel = default_human_skeleton()
    pose = PoseParams.canonical(skel)
    segs = bone_segments(skel, pose)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.6, 0.6, (200, 3))
    J = skel.n_joints

    w = bone_weights(pts, segs, skel.radii, k=J)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-6)

    # brute force: all-bones RBF, no sparsification
    d = segment_distances(pts, segs)
    sigma = 1.5 * skel.radii
    raw = np.exp(-0.5 * (d / sigma[None]) ** 2)
    ref = raw / raw.sum(axis=1, keepdims=True)
    assert np.allclose(w, ref, atol=1e-9)


def test_far_point_falls_back_to_nearest_bone():
    skel = default_human_skeleton()
    segs = bone_segments(skel, PoseParams.canonical(skel))
    w = bone_weights(np.array([[50.0, 50.0, 50.0]]), segs, skel.radii)
    assert np.isclose(w.sum(), 1.0)
    assert w.max() == 1.0


def test_degenerate_template_rejected():
    skel = default_human_skeleton()
    with pytest.raises(ContractError):
        diffuse_skinning(np.zeros((10, 3)), skel)


def test_field_query_interpolates_and_is_exact_on_vertices():
    skel = default_human_skeleton()
    rng = np.random.default_rng(1)
    verts = rng.uniform(-0.5, 0.5, (300, 3))
    field = diffuse_skinning(verts, skel)
    w = field.query(verts[:5])
    assert np.allclose(w, field.weights[:5], atol=1e-9)
    q = field.query(rng.uniform(-0.5, 0.5, (20, 3)))
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-6)
    assert np.all(q >= 0)


def test_field_roundtrip(tmp_path):
    skel = default_human_skeleton()
    rng = np.random.default_rng(2)
    field = diffuse_skinning(rng.uniform(-0.5, 0.5, (50, 3)), skel)
    path = tmp_path / "skin.npz"
    field.save(path)
    loaded = SkinningField.load(path)
    assert np.allclose(loaded.weights, field.weights, atol=1e-6)


def test_lbs_blend_trivial_cases():
    J = 4
    B = np.stack([np.eye(4)] * J)
    w = np.array([0.25, 0.25, 0.25, 0.25])
    assert np.allclose(lbs_blend(w, B), np.eye(4))

    B[2] = np.eye(4)
    B[2, :3, 3] = [1.0, 2.0, 3.0]
    w = np.zeros(J)
    w[2] = 1.0
    assert np.allclose(lbs_blend(w, B), B[2])

    # two translations blend to the average
    B = np.stack([np.eye(4)] * 2)
    B[0, :3, 3] = [2, 0, 0]
    B[1, :3, 3] = [0, 4, 0]
    T = lbs_blend(np.array([0.5, 0.5]), B)
    assert np.allclose(T[:3, 3], [1, 2, 0])


def test_deform_point_and_cov():
    T = np.eye(4)
    x = np.array([[0.3, -0.2, 0.5]])
    cov = np.diag([1.0, 4.0, 9.0])[None]
    assert np.allclose(deform_points(x, T), x)
    assert np.allclose(deform_covs(cov, T), cov)

    # 90 degrees about z permutes the x/y variances
    T = np.eye(4)
    T[:3, :3] = rodrigues(np.array([0, 0, np.pi / 2]))
    out = deform_covs(cov, T)
    assert np.allclose(out[0], np.diag([4.0, 1.0, 9.0]), atol=1e-12)


def test_rigid_deform_preserves_cov_eigenvalues_and_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(10):
        A = rng.normal(0, 1, (3, 3))
        cov = (A @ A.T)[None]
        T = np.eye(4)
        T[:3, :3] = rodrigues(rng.normal(0, 1, 3))
        T[:3, 3] = rng.normal(0, 1, 3)
        out = deform_covs(cov, T)
        assert np.allclose(out[0], out[0].T, atol=1e-12)
        assert np.allclose(np.sort(np.linalg.eigvalsh(out[0])),
                           np.sort(np.linalg.eigvalsh(cov[0])), atol=1e-5)
    # symmetry holds for arbitrary (non-rigid) T too
    T = np.eye(4)
    T[:3, :3] = rng.normal(0, 1, (3, 3))
    out = deform_covs(cov, T)
    assert np.allclose(out[0], out[0].T, atol=1e-12)
