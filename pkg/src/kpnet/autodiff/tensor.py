"""Tensor type and the reverse-mode graph walk.

A ``Tensor`` wraps a numpy array.  Ops in :mod:`kpnet.autodiff.functional`
build new tensors and attach a closure that maps the output gradient to
input gradients.  ``backward`` walks the recorded graph in reverse
topological order and accumulates ``.grad`` on leaves that require it.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (teacher and eval forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # arithmetic sugar; all of it routes through functional ops
    def __add__(self, other):
        from . import functional as F

        return F.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import functional as F

        return F.sub(self, other)

    def __rsub__(self, other):
        from . import functional as F

        return F.sub(other, self)

    def __mul__(self, other):
        from . import functional as F

        return F.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import functional as F

        return F.mul(self, -1.0)

    def sum(self):
        from . import functional as F

        return F.sum(self)

    def mean(self):
        from . import functional as F

        return F.mean(self)

    def reshape(self, *shape):
        from . import functional as F

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        backward(self, grad)


class Parameter(Tensor):
    """A leaf tensor owned by a network, with its optimizer state.

    ``learnable=False`` parameters never receive gradients and are skipped
    by :func:`kpnet.autodiff.optim.sgd_step`; the frozen teacher uses this.
    """

    __slots__ = ("momentum_buffer", "weight_decay", "learnable")

    def __init__(self, data, weight_decay: float = 0.0, learnable: bool = True, name: str = ""):
        super().__init__(data, requires_grad=learnable, name=name)
        if weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {weight_decay}")
        self.momentum_buffer = np.zeros_like(self.data)
        self.weight_decay = float(weight_decay)
        self.learnable = bool(learnable)

    def freeze(self) -> None:
        self.learnable = False
        self.requires_grad = False
        self.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name or '?'}, shape={self.shape}, learnable={self.learnable})"


def as_tensor(x) -> Tensor:
    """Wrap arrays and scalars; float inputs keep their precision, anything else becomes float32."""
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def make_result(
    data: np.ndarray,
    parents: Iterable[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Wrap ``data`` as an op output; record the graph edge only if needed."""
    parents = tuple(parents)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Intermediate gradients are dropped once consumed.  Leaves with
    ``requires_grad=False`` (frozen parameters, data) receive nothing.
    """
    if not loss.requires_grad:
        return
    if grad is None:
        if loss.data.size != 1:
            raise ValueError("backward() without an explicit gradient needs a scalar loss")
        grad = np.ones_like(loss.data)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
