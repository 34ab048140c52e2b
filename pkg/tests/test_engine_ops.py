"""Forward-value tests for engine ops against naive-loop oracles."""

import numpy as np
import pytest

from gsavatar.engine import Tape, Tensor, ops
from gsavatar.errors import NumericsError, ShapeError


def naive_conv2d(x, w, stride=1, pad=0):
    """Direct nested-loop convolution oracle (float64)."""
    n, c, h, wd = x.shape
    o, i, kh, kw = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for nn in range(n):
        for oo in range(o):
            for yy in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for cc in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += xp[nn, cc, yy * stride + ki, xx * stride + kj] \
                                    * float(w[oo, cc, ki, kj])
                    out[nn, oo, yy, xx] = acc
    return out


def test_conv2d_pointwise_scaling():
    x = Tensor(np.ones((1, 1, 3, 3), np.float32))
    w = Tensor(np.full((1, 1, 1, 1), 2.0, np.float32))
    y = ops.conv2d(x, w)
    assert y.shape == (1, 1, 3, 3)
    assert np.allclose(y.data, 2.0)


def test_conv2d_matches_naive_loop():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    w = np.full((1, 1, 3, 3), 1.0 / 9.0, np.float32)
    y = ops.conv2d(Tensor(x), Tensor(w), stride=1, pad=1)
    ref = naive_conv2d(x, w, stride=1, pad=1)
    assert np.allclose(y.data, ref, atol=1e-6)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_random_vs_naive(stride, pad):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 6, 5)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
    y = ops.conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad)
    ref = naive_conv2d(x, w, stride=stride, pad=pad)
    assert np.allclose(y.data, ref, atol=1e-4)


def test_conv2d_zero_kernel_and_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    wz = np.zeros((3, 2, 3, 3), np.float32)
    assert np.all(ops.conv2d(Tensor(x), Tensor(wz), pad=1).data == 0.0)
    # 1x1 identity kernel reproduces the input exactly
    wi = np.eye(2, dtype=np.float32).reshape(2, 2, 1, 1)
    assert np.array_equal(ops.conv2d(Tensor(x), Tensor(wi)).data, x)


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 3, 4, 4), np.float32))
    w = Tensor(np.zeros((2, 2, 3, 3), np.float32))
    with pytest.raises(ShapeError):
        ops.conv2d(x, w)


def test_avgpool_upsample_naive():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 4, 6)).astype(np.float32)
    p = ops.avgpool2x(Tensor(x))
    for i in range(2):
        for j in range(3):
            assert np.isclose(p.data[0, 0, i, j], x[0, 0, 2*i:2*i+2, 2*j:2*j+2].mean(),
                              atol=1e-6)
    u = ops.upsample2x(Tensor(x))
    assert u.shape == (1, 2, 8, 12)
    assert np.all(u.data[0, 1, 2, 4] == x[0, 1, 1, 2])


def test_concat_and_crop():
    a = Tensor(np.ones((1, 2, 3, 3), np.float32))
    b = Tensor(np.zeros((1, 1, 3, 3), np.float32))
    y = ops.concat_channels([a, b])
    assert y.shape == (1, 3, 3, 3)
    assert y.data[0, 2].sum() == 0.0
    c = ops.crop2d(a, 1, 0, 2, 3)
    assert c.shape == (1, 2, 2, 3)


def test_activations_and_clamp():
    x = Tensor(np.array([-2.0, 0.0, 3.0], np.float32))
    assert np.allclose(ops.leaky_relu(x, 0.1).data, [-0.2, 0.0, 3.0])
    assert np.allclose(ops.sigmoid(x).data, 1 / (1 + np.exp([2.0, 0.0, -3.0])), atol=1e-6)
    assert np.allclose(ops.tanh(x).data, np.tanh([-2, 0, 3]), atol=1e-6)
    assert np.allclose(ops.clamp(x, -1.0, 1.0).data, [-1.0, 0.0, 1.0])


def test_instance_norm_statistics():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 8, 8)).astype(np.float32) * 5 + 2
    y = ops.instance_norm(Tensor(x), Tensor(np.ones(3, np.float32)),
                          Tensor(np.zeros(3, np.float32)))
    assert np.allclose(y.data.mean(axis=(2, 3)), 0.0, atol=1e-5)
    assert np.allclose(y.data.std(axis=(2, 3)), 1.0, atol=1e-3)


def test_losses_closed_form():
    a = Tensor(np.full((2, 3), 0.5, np.float32))
    b = Tensor(np.zeros((2, 3), np.float32))
    assert np.isclose(ops.mse(a, b).item(), 0.25)
    assert np.isclose(ops.l1(a, b).item(), 0.5)
    m = np.array([[1, 1, 0], [0, 0, 0]], np.float32)
    assert np.isclose(ops.masked_mse(a, b, m).item(), 0.25)


def test_gather_and_slice():
    x = np.arange(24, dtype=np.float32).reshape(1, 2, 3, 4)
    g = ops.gather_pixels(Tensor(x), np.array([0, 5, 11]))
    assert g.shape == (3, 2)
    assert g.data[1, 0] == x[0, 0, 1, 1]
    s = ops.slice_cols(g, 1, 2)
    assert s.shape == (3, 1)


def test_quat_rotmat_known_values():
    # identity and 90 degrees about z
    q = Tensor(np.array([[1, 0, 0, 0], [np.cos(np.pi/4), 0, 0, np.sin(np.pi/4)]], np.float32))
    R = ops.quat_to_rotmat(q)
    assert np.allclose(R.data[0], np.eye(3), atol=1e-6)
    expect = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], np.float32)
    assert np.allclose(R.data[1], expect, atol=1e-6)


def test_rot_scale_cov_eigenvalues():
    rng = np.random.default_rng(5)
    q = rng.standard_normal((10, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    s = np.abs(rng.standard_normal((10, 3))) + 0.1
    R = ops.quat_to_rotmat(Tensor(q.astype(np.float32)))
    cov = ops.rot_scale_cov(R, Tensor(s.astype(np.float32)))
    for m in range(10):
        ev = np.sort(np.linalg.eigvalsh(cov.data[m].astype(np.float64)))
        assert np.allclose(ev, np.sort(s[m] ** 2), atol=1e-5)


def test_nonfinite_detection():
    x = Tensor(np.array([1.0, np.inf], np.float32))
    with pytest.raises(NumericsError):
        ops.scale(x, 2.0)


def test_ops_ignore_inactive_tape():
    # outside a Tape context ops still compute values
    y = ops.add(Tensor(np.ones(3, np.float32)), Tensor(np.ones(3, np.float32)))
    assert np.all(y.data == 2.0)
    with Tape() as t:
        z = ops.scale(y, 3.0)
    assert len(t.nodes) == 1 and z.data[0] == 6.0
