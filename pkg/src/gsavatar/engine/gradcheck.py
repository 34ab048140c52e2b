"""Central finite-difference checking of tape gradients.

The op graph is evaluated in float64 (ops preserve input dtype) and the
checker accumulates in float64, so the comparison threshold can be tight.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


def finite_difference_grads(fn, inputs: list[np.ndarray], eps: float = 1e-3):
    """Central differences of scalar fn(*arrays) w.r.t. every input entry."""
    grads = []
    for k, base in enumerate(inputs):
        g = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn(*inputs))
            flat[i] = orig - eps
            fm = float(fn(*inputs))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def gradcheck(build_loss, shapes, seed: int = 0, eps: float = 1e-3,
              rtol: float = 1e-3, atol: float = 1e-4, scale: float = 1.0):
    """Compare tape gradients of `build_loss(*tensors)` against central FD.

    `build_loss` must construct the graph from scratch each call and return
    a scalar Tensor. Returns the maximum relative error observed.
    """
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s).astype(np.float64) * scale for s in shapes]

    def run_value(*arrs):
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrs]
        with Tape():
            loss = build_loss(*tensors)
        return loss.item()

    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    with Tape() as tape:
        loss = build_loss(*tensors)
    tape.backward(loss)
    analytic = [np.zeros(s, dtype=np.float64) if t.grad is None else t.grad
                for s, t in zip(shapes, tensors)]

    numeric = finite_difference_grads(run_value, arrays, eps=eps)

    max_rel = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), atol)
        rel = np.abs(a - n) / denom
        max_rel = max(max_rel, float(rel.max()) if rel.size else 0.0)
    if max_rel >= rtol:
        raise AssertionError(f"gradcheck failed: max relative error {max_rel:.3e} >= {rtol:.0e}")
    return max_rel
