"""Adam optimizer over engine Tensors."""

from __future__ import annotations

import numpy as np

from ..errors import NumericsError, ShapeError
from .tensor import Tensor


def adam_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> np.ndarray:
    """One Adam update on a raw array; mutates and returns `state`'s buffers.

    `state` holds 'm', 'v' (zeros on first call) and 't'. Raises on
    non-finite gradients so a training loop can abort the step.
    """
    if param.shape != grad.shape:
        raise ShapeError(f"adam_step: param {param.shape} vs grad {grad.shape}")
    if not np.isfinite(grad).all():
        raise NumericsError("adam_step: non-finite gradient")
    b1, b2 = betas
    if not state:
        state["m"] = np.zeros_like(param, dtype=np.float32)
        state["v"] = np.zeros_like(param, dtype=np.float32)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    g32 = grad.astype(np.float32, copy=False)
    state["m"] = b1 * state["m"] + (1.0 - b1) * g32
    state["v"] = b2 * state["v"] + (1.0 - b2) * g32 * g32
    mhat = state["m"] / (1.0 - b1 ** t)
    vhat = state["v"] / (1.0 - b2 ** t)
    return (param - lr * mhat / (np.sqrt(vhat) + eps)).astype(param.dtype, copy=False)


class Adam:
    """Keeps per-parameter moment state for a fixed list of Tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = [dict() for _ in self.params]

    def step(self):
        for p, st in zip(self.params, self.state):
            if p.grad is None:
                continue
            p.data = adam_step(p.data, p.grad, st, self.lr, self.betas, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
