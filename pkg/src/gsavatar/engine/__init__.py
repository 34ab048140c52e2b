"""Dense-tensor arithmetic with reverse-mode autodiff on a per-pass tape."""

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_grads, gradcheck
from .optim import Adam, adam_step
from .tensor import DEFAULT_DTYPE, Tape, Tensor, active_tape, as_tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int,
                 dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Uniform fan-in scaled init: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


__all__ = [
    "Adam", "Tape", "Tensor", "active_tape", "adam_step", "as_tensor",
    "finite_difference_grads", "gradcheck", "load_checkpoint", "ops",
    "save_checkpoint", "uniform_init", "DEFAULT_DTYPE",
]
