"""Differentiable ops over Tensors.

Every op allocates a fresh output, records a vjp on the active tape, and
verifies the output is finite. Ops preserve the dtype of their inputs so
the whole graph can be run in float64 by the gradient checker.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, active_tape, check_finite


def _out(data, parents, vjp, name):
    check_finite(data, name)
    t = Tensor(data)
    tape = active_tape()
    if tape is not None:
        tape.record(t, parents, vjp)
    return t


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _out(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _out(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _out(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def neg(a: Tensor) -> Tensor:
    return _out(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _out(a.data * k, (a,), lambda g: (g * k,), "scale")


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.dtype)
    return _out(a.data + c, (a,), lambda g: (g,), "add_const")


def mul_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.dtype)
    return _out(a.data * c, (a,), lambda g: (g * c,), "mul_const")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _out(y, (a,), lambda g: (g * y,), "exp")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(a.data, lo, hi)
    inside = ((a.data >= lo) & (a.data <= hi)).astype(a.dtype)
    return _out(y, (a,), lambda g: (g * inside,), "clamp")


# ---------------------------------------------------------------------------
# activations


def sigmoid(a: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-a.data))
    return _out(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _out(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    pos = a.data > 0
    y = np.where(pos, a.data, a.data * slope)
    fac = np.where(pos, a.dtype.type(1.0), a.dtype.type(slope))
    return _out(y, (a,), lambda g: (g * fac,), "leaky_relu")


# ---------------------------------------------------------------------------
# convolution and friends (NCHW)


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, oh: int, ow: int):
    n, c = xp.shape[:2]
    s = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s[0], s[1], s[2], s[3], s[2] * sh, s[3] * sw),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, oh * ow)  # copies


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2D cross-correlation, x:(N,C,H,W) w:(O,I,kh,kw) -> (N,O,OH,OW)."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4D input and kernel")
    if stride < 1 or pad < 0:
        raise ShapeError("conv2d: stride must be >=1 and pad >=0")
    n, c, h, wd = x.data.shape
    o, i, kh, kw = w.data.shape
    if i != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {i}")
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, stride, oh, ow)  # (N, C*kh*kw, OH*OW)
    w2 = w.data.reshape(o, c * kh * kw)
    y = np.matmul(w2, cols).reshape(n, o, oh, ow)

    need_x = x._produced or x.requires_grad

    def vjp(g):
        g2 = g.reshape(n, o, oh * ow)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(o, c, kh, kw)
        gx = None
        if need_x:
            gcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, oh, ow)
            gxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    gxp[:, :, ki:ki + stride * oh:stride,
                        kj:kj + stride * ow:stride] += gcols[:, :, ki, kj]
            gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
        return (gx, gw)

    return _out(y, (x, w), vjp, "conv2d")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim != 1 or b.data.shape[0] != x.data.shape[1]:
        raise ShapeError("add_channel_bias: bias must be (C,)")
    y = x.data + b.data[None, :, None, None]
    return _out(y, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))), "add_channel_bias")


def avgpool2x(x: Tensor) -> Tensor:
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2x needs even spatial dims, got {h}x{w}")
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.dtype.type(0.25)
        return (gx,)

    return _out(y, (x,), vjp, "avgpool2x")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def vjp(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return _out(y, (x,), vjp, "upsample2x")


def concat_channels(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels: empty list")
    y = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=1))

    return _out(y, tuple(parts), vjp, "concat_channels")


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_rows: empty list")
    y = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=0))

    return _out(y, tuple(parts), vjp, "concat_rows")


def slice_channels(x: Tensor, a: int, b: int) -> Tensor:
    """Channel slice of an NCHW tensor."""
    if x.data.ndim != 4 or not (0 <= a < b <= x.data.shape[1]):
        raise ShapeError("slice_channels: bad channel range")
    y = x.data[:, a:b].copy()

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, a:b] = g
        return (gx,)

    return _out(y, (x,), vjp, "slice_channels")


def reshape(x: Tensor, shape) -> Tensor:
    y = x.data.reshape(shape).copy()
    return _out(y, (x,), lambda g: (g.reshape(x.data.shape),), "reshape")


def crop2d(x: Tensor, top: int, left: int, h: int, w: int) -> Tensor:
    n, c, hh, ww = x.data.shape
    if top < 0 or left < 0 or top + h > hh or left + w > ww:
        raise ShapeError("crop2d: window out of bounds")
    y = x.data[:, :, top:top + h, left:left + w].copy()

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, :, top:top + h, left:left + w] = g
        return (gx,)

    return _out(y, (x,), vjp, "crop2d")


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes."""
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("instance_norm: gamma/beta must be (C,)")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = (x.data - mu) * inv
    y = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def vjp(g):
        gg = g * gamma.data[None, :, None, None]
        m1 = gg.mean(axis=(2, 3), keepdims=True)
        m2 = (gg * xhat).mean(axis=(2, 3), keepdims=True)
        gx = inv * (gg - m1 - xhat * m2)
        ggamma = (g * xhat).sum(axis=(0, 2, 3))
        gbeta = g.sum(axis=(0, 2, 3))
        return (gx, ggamma, gbeta)

    return _out(y, (x, gamma, beta), vjp, "instance_norm")


# ---------------------------------------------------------------------------
# reductions (64-bit accumulation)


def sum_all(a: Tensor) -> Tensor:
    v = a.data.sum(dtype=np.float64)
    return _out(np.asarray(v, dtype=a.dtype), (a,),
                lambda g: (np.broadcast_to(g, a.data.shape) * np.ones((), a.dtype),),
                "sum_all")


def mean_all(a: Tensor) -> Tensor:
    nel = a.data.size
    v = a.data.mean(dtype=np.float64)
    return _out(np.asarray(v, dtype=a.dtype), (a,),
                lambda g: (np.broadcast_to(g / nel, a.data.shape).astype(a.dtype, copy=False),),
                "mean_all")


def mse(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    v = np.mean(diff.astype(np.float64) ** 2)
    nel = diff.size

    def vjp(g):
        ga = (2.0 / nel) * g * diff
        return (ga.astype(a.dtype, copy=False), (-ga).astype(a.dtype, copy=False))

    return _out(np.asarray(v, dtype=a.dtype), (a, b), vjp, "mse")


def l1(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "l1")
    diff = a.data - b.data
    v = np.mean(np.abs(diff.astype(np.float64)))
    nel = diff.size
    sgn = np.sign(diff)

    def vjp(g):
        ga = g * sgn / nel
        return (ga.astype(a.dtype, copy=False), (-ga).astype(a.dtype, copy=False))

    return _out(np.asarray(v, dtype=a.dtype), (a, b), vjp, "l1")


def masked_mse(a: Tensor, b: Tensor, mask) -> Tensor:
    """MSE over elements where mask is true; mask is a constant."""
    _same_shape(a, b, "masked_mse")
    m = np.asarray(mask, dtype=a.dtype)
    if m.shape != a.data.shape:
        m = np.broadcast_to(m, a.data.shape)
    denom = max(float(m.sum(dtype=np.float64)), 1.0)
    diff = (a.data - b.data) * m
    v = float((diff.astype(np.float64) ** 2).sum() / denom)

    def vjp(g):
        ga = (2.0 / denom) * g * diff
        return (ga.astype(a.dtype, copy=False), (-ga).astype(a.dtype, copy=False))

    return _out(np.asarray(v, dtype=a.dtype), (a, b), vjp, "masked_mse")


# ---------------------------------------------------------------------------
# gather / row ops used by the Gaussian decode path


def gather_pixels(x: Tensor, idx: np.ndarray) -> Tensor:
    """Pick per-pixel columns from a (1,C,H,W) map: returns (M,C)."""
    if x.data.ndim != 4 or x.data.shape[0] != 1:
        raise ShapeError("gather_pixels expects (1,C,H,W)")
    _, c, h, w = x.data.shape
    idx = np.asarray(idx, dtype=np.int64)
    flat = x.data.reshape(c, h * w)
    y = flat[:, idx].T.copy()

    def vjp(g):
        gf = np.zeros((c, h * w), dtype=x.dtype)
        np.add.at(gf, (slice(None), idx), g.T)
        return (gf.reshape(1, c, h, w),)

    return _out(y, (x,), vjp, "gather_pixels")


def slice_cols(x: Tensor, a: int, b: int) -> Tensor:
    y = x.data[:, a:b].copy()

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, a:b] = g
        return (gx,)

    return _out(y, (x,), vjp, "slice_cols")


def normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    n = np.sqrt((x.data ** 2).sum(axis=1, keepdims=True) + x.dtype.type(eps))
    y = x.data / n

    def vjp(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - y * dot) / n,)

    return _out(y, (x,), vjp, "normalize_rows")


def quat_to_rotmat(q: Tensor) -> Tensor:
    """Unit quaternions (M,4), scalar-first, to rotation matrices (M,3,3)."""
    w, x, y, z = (q.data[:, k] for k in range(4))
    R = np.empty(q.data.shape[:1] + (3, 3), dtype=q.dtype)
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)

    def vjp(g):
        gq = np.empty_like(q.data)
        gq[:, 0] = 2 * (-z * (g[:, 0, 1] - g[:, 1, 0])
                        + y * (g[:, 0, 2] - g[:, 2, 0])
                        - x * (g[:, 1, 2] - g[:, 2, 1]))
        gq[:, 1] = 2 * (y * (g[:, 0, 1] + g[:, 1, 0])
                        + z * (g[:, 0, 2] + g[:, 2, 0])
                        - w * (g[:, 1, 2] - g[:, 2, 1])
                        - 2 * x * (g[:, 1, 1] + g[:, 2, 2]))
        gq[:, 2] = 2 * (x * (g[:, 0, 1] + g[:, 1, 0])
                        + w * (g[:, 0, 2] - g[:, 2, 0])
                        + z * (g[:, 1, 2] + g[:, 2, 1])
                        - 2 * y * (g[:, 0, 0] + g[:, 2, 2]))
        gq[:, 3] = 2 * (-w * (g[:, 0, 1] - g[:, 1, 0])
                        + x * (g[:, 0, 2] + g[:, 2, 0])
                        + y * (g[:, 1, 2] + g[:, 2, 1])
                        - 2 * z * (g[:, 0, 0] + g[:, 1, 1]))
        return (gq,)

    return _out(R, (q,), vjp, "quat_to_rotmat")


def rot_scale_cov(R: Tensor, s: Tensor) -> Tensor:
    """Covariance R diag(s)^2 R^T from rotations (M,3,3) and scales (M,3)."""
    d = s.data ** 2
    RD = R.data * d[:, None, :]
    cov = np.matmul(RD, R.data.transpose(0, 2, 1))

    def vjp(g):
        gsym = g + g.transpose(0, 2, 1)
        gR = np.matmul(gsym, RD)
        rtgr = np.einsum("mia,mij,mja->ma", R.data, g, R.data)
        gs = 2.0 * s.data * rtgr
        return (gR, gs.astype(s.dtype, copy=False))

    return _out(cov, (R, s), vjp, "rot_scale_cov")


def transform_cov33(cov: Tensor, A: np.ndarray) -> Tensor:
    """A cov A^T with a constant per-row 3x3 transform A (M,3,3)."""
    A = np.asarray(A, dtype=cov.dtype)
    y = np.matmul(np.matmul(A, cov.data), A.transpose(0, 2, 1))

    def vjp(g):
        return (np.matmul(np.matmul(A.transpose(0, 2, 1), g), A),)

    return _out(y, (cov,), vjp, "transform_cov33")


def affine_points(x: Tensor, A: np.ndarray) -> Tensor:
    """Apply constant per-row affine transforms A (M,3,4) to points (M,3)."""
    A = np.asarray(A, dtype=x.dtype)
    y = np.einsum("mij,mj->mi", A[:, :, :3], x.data) + A[:, :, 3]

    def vjp(g):
        return (np.einsum("mij,mi->mj", A[:, :, :3], g),)

    return _out(y, (x,), vjp, "affine_points")
