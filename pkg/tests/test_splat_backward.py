"""Analytic rasterizer gradients against central finite differences."""

import numpy as np

from gsavatar.engine import Tape, Tensor, ops
from gsavatar.splat import (Camera, Gaussians, rasterize, rasterize_arrays,
                            rasterize_backward, render_gaussians,
                            build_covariance)

from test_splat_forward import make_camera, random_scene


def scene_order(scene, cam):
    depth = scene.x.astype(np.float64) @ cam.R.T[:, 2] + cam.t[2]
    return np.argsort(depth, kind="stable")


def test_color_gradient_linearity():
    cam = make_camera(w=32, h=32, f=32, centered_px=True)
    scene = Gaussians([[0, 0, 2.0]], [[1, 0, 0, 0]], [[0.3, 0.3, 0.3]],
                      [0.8], [[0.2, 0.7, 0.1]])
    g_up = np.zeros((32, 32, 3))
    g_up[:, :, 0] = 1.0  # loss = sum of red channel
    grads = rasterize_backward(scene, cam, g_up)
    assert grads["c"][0, 0] > 0.0
    assert grads["c"][0, 1] == 0.0
    assert grads["c"][0, 2] == 0.0


def test_occluded_gaussian_gets_zero_gradient():
    cam = make_camera(w=32, h=32, f=32, centered_px=True)
    # three near-opaque front layers drive transmittance below the cutoff
    scene = Gaussians(
        x=[[0, 0, 1.5], [0, 0, 1.7], [0, 0, 1.9], [0, 0, 3.0]],
        q=[[1, 0, 0, 0]] * 4,
        s=[[0.8, 0.8, 0.8]] * 3 + [[0.05, 0.05, 0.05]],
        o=[0.989, 0.989, 0.989, 0.9],
        c=[[1, 1, 1]] * 3 + [[0.3, 0.9, 0.2]],
    )
    grads = rasterize_backward(scene, cam, np.ones((32, 32, 3)))
    assert np.all(grads["c"][3] == 0.0)
    assert np.all(grads["x"][3] == 0.0)


def test_finite_differences_small_scenes():
    from gsavatar.splat.fdcheck import check_rasterizer_gradients
    for seed in (0, 1):
        scene = random_scene(np.random.default_rng(seed), 5, spread=0.4)
        cam = make_camera(w=16, h=16, f=16)
        max_rel = check_rasterizer_gradients(scene, cam, seed=42 + seed)
        assert max_rel < 1e-2, f"rasterizer FD mismatch: {max_rel:.3e}"


def test_gradient_descent_color_convergence():
    cam = make_camera(w=24, h=24, f=24)
    scene = Gaussians([[0, 0, 2.0]], [[1, 0, 0, 0]], [[0.5, 0.5, 0.5]],
                      [0.95], [[0.1, 0.1, 0.1]])
    target = np.full((24, 24, 3), 0.0)
    tgt0 = rasterize(scene, cam)
    mask = tgt0.alpha > 0.9
    target[mask] = [0.8, 0.3, 0.5]

    color = scene.c.copy()
    lr = 0.05
    m = np.zeros_like(color)
    v = np.zeros_like(color)
    mse = None
    for step in range(1, 200):
        scene.c = np.clip(color, 0.0, 1.0)
        tgt = rasterize(scene, cam)
        diff = (tgt.rgb - target) * mask[:, :, None]
        mse = float((diff ** 2).sum() / max(mask.sum() * 3, 1))
        if mse < 1e-4:
            break
        g_up = 2.0 * diff / max(mask.sum() * 3, 1)
        gc = rasterize_backward(scene, cam, g_up)["c"]
        m = 0.9 * m + 0.1 * gc
        v = 0.999 * v + 0.001 * gc * gc
        mh = m / (1 - 0.9 ** step)
        vh = v / (1 - 0.999 ** step)
        color = color - lr * mh / (np.sqrt(vh) + 1e-8)
    assert mse < 1e-4, f"color fit did not converge: {mse}"


def test_render_op_on_tape_matches_backward():
    rng = np.random.default_rng(9)
    scene = random_scene(rng, 8)
    cam = make_camera(w=24, h=24, f=24)
    covs = build_covariance(scene.q, scene.s).astype(np.float32)

    x_t = Tensor(scene.x.copy(), requires_grad=True)
    cov_t = Tensor(covs.copy(), requires_grad=True)
    o_t = Tensor(scene.o.copy(), requires_grad=True)
    c_t = Tensor(scene.c.copy(), requires_grad=True)
    target = Tensor(rng.uniform(0, 1, (24, 24, 3)).astype(np.float32))
    with Tape() as tape:
        img, alpha = render_gaussians(x_t, cov_t, o_t, c_t, cam)
        loss = ops.mse(img, target)
    tape.backward(loss)
    assert x_t.grad is not None and np.isfinite(x_t.grad).all()
    assert c_t.grad is not None and np.abs(c_t.grad).max() > 0

    # compare against the direct array-level backward
    g_up = 2.0 * (rasterize_arrays(scene.x, covs, scene.o, scene.c, cam).rgb
                  - target.data) / target.data.size
    direct = rasterize_backward(scene, cam, g_up.astype(np.float64))
    assert np.allclose(c_t.grad, direct["c"], atol=1e-5)
    assert np.allclose(x_t.grad, direct["x"], atol=1e-4)
