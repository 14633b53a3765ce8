"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``arr`` (perturbed in place, restored)."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``max|a - n| / max(|n|)``: worst deviation relative to gradient scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    h: float,
    seed: int = 0,
) -> list[float]:
    """Compare backprop against central differences for every input.

    ``fn(*inputs)`` may return any-shaped tensor; it is reduced to a scalar
    with fixed random weights so every output element contributes.  Returns
    one relative error per input that requires grad.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    probe = rng.standard_normal(out.shape).astype(out.dtype)

    def scalar() -> float:
        return float(np.sum(fn(*inputs).data.astype(np.float64) * probe))

    for t in inputs:
        t.grad = None
    out = fn(*inputs)
    out.backward(probe)
    errors = []
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numerical_gradient(scalar, t.data, h)
        errors.append(relative_error(analytic, numeric))
    return errors
