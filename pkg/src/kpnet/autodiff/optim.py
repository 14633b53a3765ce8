"""SGD with momentum and per-parameter weight decay."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter


def sgd_step(params: Iterable[Parameter], lr: float, momentum: float) -> None:
    """One in-place update of every learnable parameter.

    ``v <- momentum * v + grad + weight_decay * w``, then ``w <- w - lr * v``.
    A missing gradient counts as zero.  Frozen parameters are left alone.
    """
    for p in params:
        if not p.learnable:
            continue
        dt = p.data.dtype.type
        g = p.grad if p.grad is not None else 0
        v = p.momentum_buffer
        v *= dt(momentum)
        v += g
        if p.weight_decay:
            v += dt(p.weight_decay) * p.data
        p.data -= dt(lr) * v


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


def l2_penalty(params: Iterable[Parameter]):
    """Explicit ``sum(wd/2 * ||w||^2)`` as a differentiable scalar.

    Only used to check that optimizer-side weight decay matches an explicit
    regularization term; training relies on :func:`sgd_step`.
    """
    from . import functional as F

    total = None
    for p in params:
        if not p.learnable or not p.weight_decay:
            continue
        term = F.mul(F.sum(F.mul(p, p)), 0.5 * p.weight_decay)
        total = term if total is None else F.add(total, term)
    if total is None:
        return F.stop_gradient(np.zeros((), dtype=np.float32))
    return total
