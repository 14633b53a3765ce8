"""Knowledge projection layer and the relaxed-L1 guidance loss.

The projection is a bias-free 1×1 convolution that maps a teacher feature
map (``O_t`` channels) onto the channel space of a student layer (``O_s``
channels) at the same spatial resolution.  The guidance loss compares the
projected teacher feature ``r`` with the student feature ``v``, weighting
each position by 1 when its mask source is nonnegative and by ``eta``
otherwise, then averaging over all elements.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import Parameter, Tensor, as_tensor
from .autodiff import functional as F
from .errors import ConfigError, ShapeError

MASK_SOURCES = ("projected", "teacher-mean")


@dataclass
class KPLossConfig:
    eta: float = 0.25
    lam: float = 0.6
    mask_source: str = "projected"

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.mask_source not in MASK_SOURCES:
            raise ConfigError(f"mask_source must be one of {MASK_SOURCES}, got {self.mask_source!r}")


class ProjectionLayer:
    """Learnable ``O_s × O_t × 1 × 1`` weight mapping teacher to student channels."""

    def __init__(
        self,
        teacher_channels: int,
        student_channels: int,
        seed: int | np.random.Generator = 0,
        dtype=np.float32,
        weight_decay: float = 1e-3,
    ):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        bound = np.sqrt(6.0 / teacher_channels)
        w = rng.uniform(-bound, bound, size=(student_channels, teacher_channels, 1, 1)).astype(dtype)
        self.weight = Parameter(w, weight_decay=weight_decay, name="projection.weight")

    @property
    def teacher_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def student_channels(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.weight]

    def __call__(self, mu: Tensor) -> Tensor:
        return project(mu, self)


def project(mu, layer: ProjectionLayer) -> Tensor:
    """Pure 1×1 convolution of the teacher feature; no bias, no activation."""
    mu = as_tensor(mu)
    if mu.ndim != 4 or mu.shape[1] != layer.teacher_channels:
        raise ShapeError(
            f"projection expects N×{layer.teacher_channels}×H×W teacher features, got {tuple(mu.shape)}"
        )
    return F.conv2d(mu, layer.weight, 1, 0)


def relax_mask(source, eta: float) -> np.ndarray:
    """Elementwise weights: 1 where ``source >= 0``, ``eta`` elsewhere."""
    src = source.data if isinstance(source, Tensor) else np.asarray(source)
    dtype = src.dtype if src.dtype.kind == "f" else np.dtype(np.float64)
    return np.where(src >= 0, dtype.type(1), dtype.type(eta)).astype(dtype)


def teacher_mean_mask(mu, weight: np.ndarray, eta: float) -> np.ndarray:
    """Teacher-side mask carried into student channels.

    Each student channel gets the average of the per-teacher-channel masks,
    weighted by ``|W_KP|`` and normalized per student channel.
    """
    m = relax_mask(mu, eta)  # N×O_t×H×W
    a = np.abs(weight[:, :, 0, 0]).astype(m.dtype)  # O_s×O_t
    norm = a.sum(axis=1, keepdims=True)
    a = np.divide(a, norm, out=np.full_like(a, 1.0 / a.shape[1]), where=norm > 0)
    return np.einsum("st,nthw->nshw", a, m)


def kp_loss(mask_source, r: Tensor, v: Tensor, eta: float, mask: Optional[np.ndarray] = None) -> Tensor:
    """``mean(h(mask_source) * |r - v|)``.

    The mask is piecewise constant and carries no gradient.  Pass a
    precomputed ``mask`` to override ``mask_source``.
    """
    r, v = as_tensor(r), as_tensor(v)
    if r.shape != v.shape:
        raise ShapeError(f"kp_loss: projected feature {r.shape} and student feature {v.shape} differ")
    if mask is None:
        mask = relax_mask(mask_source, eta)
    if mask.shape != r.shape:
        raise ShapeError(f"kp_loss: mask shape {mask.shape} does not match features {r.shape}")
    return F.mean(F.mul(F.abs(F.sub(r, v)), Tensor(mask.astype(r.dtype))))


@dataclass
class JointLoss:
    """``lam * kp + task + l2`` with each addend kept for logging."""

    total: Tensor
    kp: float
    task: float
    l2: float
    lam: float


def joint_loss(kp, task, lam: float, l2=0.0) -> JointLoss:
    kp_t, task_t, l2_t = as_tensor(kp), as_tensor(task), as_tensor(l2)
    total = F.add(F.add(F.mul(kp_t, lam), task_t), l2_t)
    return JointLoss(total, float(kp_t.data), float(task_t.data), float(l2_t.data), float(lam))
