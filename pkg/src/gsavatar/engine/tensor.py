"""Define-by-run tensor core: float buffers plus a gradient tape.

Parameters and activations live in float32; the gradient checker runs the
same ops in float64, so every op must preserve the dtype of its inputs.
A Tape is rebuilt on every forward pass and consumed by a single backward
pass.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError, NumericsError, ShapeError

DEFAULT_DTYPE = np.float32


class Tensor:
    """A dense float array, optionally tracked for gradients.

    Tensors are write-once: ops allocate fresh buffers and never mutate
    their inputs. ``grad`` is populated by ``Tape.backward`` for leaves
    with ``requires_grad`` and for tensors passed to ``Tape.retain_grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_produced")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._produced = False  # set when an op on an active tape created this

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return (f"Tensor(shape={tuple(self.data.shape)}, dtype={self.data.dtype},"
                f" requires_grad={self.requires_grad}"
                + (f", name={self.name!r}" if self.name else "") + ")")


class Node:
    """One recorded op: its output, parents, and the vjp callback."""

    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out: Tensor, parents, vjp):
        self.out = out
        self.parents = tuple(parents)
        self.vjp = vjp  # vjp(grad_out) -> tuple of (grad or None) per parent


_ACTIVE_TAPES: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


class Tape:
    """Ordered record of ops; nodes appear in execution (topological) order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._retained: list[Tensor] = []
        self._consumed = False

    def __enter__(self):
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _ACTIVE_TAPES.pop()
        assert popped is self

    def record(self, out: Tensor, parents, vjp):
        out._produced = True
        self.nodes.append(Node(out, parents, vjp))

    def retain_grad(self, t: Tensor):
        """Keep the gradient of an intermediate tensor after backward."""
        self._retained.append(t)

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

        Each node is visited exactly once, in reverse recording order. The
        tape is consumed afterwards; a second call is a contract error.
        """
        if self._consumed:
            raise ContractError("tape already consumed by a previous backward()")
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        if not np.isfinite(loss.data).all():
            raise NumericsError("backward() called on a non-finite loss")
        self._consumed = True

        retained_ids = {id(t) for t in self._retained}
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

        def wants_grad(t: Tensor) -> bool:
            return t._produced or t.requires_grad or id(t) in retained_ids

        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.out), None)
            if g_out is None:
                continue  # this output did not influence the loss
            if id(node.out) in retained_ids:
                node.out.grad = g_out if node.out.grad is None else node.out.grad + g_out
            for parent, g in zip(node.parents, node.vjp(g_out)):
                if g is None or not wants_grad(parent):
                    continue
                g = np.asarray(g)
                key = id(parent)
                grads[key] = grads[key] + g if key in grads else g

        # Whatever is left in `grads` belongs to leaves (tensors not produced
        # by any node on this tape): assign each exactly once.
        for node in self.nodes:
            for parent in node.parents:
                if parent._produced or not (parent.requires_grad or id(parent) in retained_ids):
                    continue
                g = grads.pop(id(parent), None)
                if g is not None:
                    parent.grad = g if parent.grad is None else parent.grad + g


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE)
    return Tensor(arr)


def check_finite(arr: np.ndarray, op_name: str):
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values produced by op '{op_name}'")
