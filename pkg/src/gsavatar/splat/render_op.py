"""Tape op bridging the engine's autodiff to the rasterizer core."""

from __future__ import annotations

import numpy as np

from ..engine.tensor import Tensor, active_tape, check_finite
from .core import rasterize_arrays, rasterize_backward_arrays
from .types import Camera


def render_gaussians(x: Tensor, cov: Tensor, o: Tensor, c: Tensor,
                     cam: Camera) -> tuple[Tensor, np.ndarray]:
    """Differentiable render of posed Gaussians to an (H,W,3) image tensor.

    `x` (M,3), `cov` (M,3,3), `o` (M,), `c` (M,3) live on the tape; the
    alpha image is returned as a plain array (no gradient flows through it).
    """
    dtype = x.data.dtype.type
    tgt, ctx = rasterize_arrays(x.data, cov.data, o.data, c.data, cam,
                                dtype=dtype, want_ctx=True)
    out = Tensor(tgt.rgb)
    check_finite(out.data, "render_gaussians")

    def vjp(g):
        gx, gcov, go, gc = rasterize_backward_arrays(ctx, g)
        return (gx, gcov, go, gc)

    tape = active_tape()
    if tape is not None:
        tape.record(out, (x, cov, o, c), vjp)
    return out, tgt.alpha
