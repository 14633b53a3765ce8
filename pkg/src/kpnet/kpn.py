"""One knowledge-projection candidate: student, projection layer and route.

Two training modes share the same student:

``init``
    The student is cut at the injection tap.  The projected teacher feature
    replaces the student's own feature there, so the task loss trains the
    projection and the output-side layers only.  The input-side layers
    (everything up to and including the injection conv) are trained only
    by the guidance loss against the detached projected feature.

``joint``
    The full student runs input to output.  ``lam * guidance + task`` is
    backpropagated through everything, projection included.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .autodiff import Parameter, Tensor, no_grad
from .autodiff import functional as F
from .errors import ConfigError, ShapeError
from .graph.arch import conv_taps
from .model import Network
from .projection import ProjectionLayer, kp_loss, project, relax_mask, teacher_mean_mask
from .routes import Route

MODES = ("init", "joint")


@dataclass
class KPNInstance:
    student: Network
    projection: ProjectionLayer
    route: Route
    validation_joint_loss: Optional[float] = None

    @property
    def injection_tap(self) -> int:
        return conv_taps(self.student.arch)[self.route.injection]

    @property
    def injection_conv(self) -> int:
        """Layer index of the injection conv itself."""
        return self.student.arch.conv_indices()[self.route.injection - 1]

    def parameters(self) -> list[Parameter]:
        return self.student.parameters() + self.projection.parameters()

    def named_parameters(self) -> dict[str, Parameter]:
        named = {f"student/{k}": p for k, p in self.student.params.items()}
        named["projection/weight"] = self.projection.weight
        return named


def make_candidate(teacher: Network, student: Network, route: Route, seed: int = 0,
                   kp_weight_decay: float = 1e-3) -> KPNInstance:
    t_layers, s_layers = teacher.layers, student.layers
    t_tap = conv_taps(teacher.arch)[route.knowledge]
    s_tap = conv_taps(student.arch)[route.injection]
    t_shape, s_shape = t_layers[t_tap].out_shape, s_layers[s_tap].out_shape
    if t_shape[1:] != s_shape[1:]:
        raise ConfigError(f"route {route.label}: teacher feature {t_shape} and student feature {s_shape} differ spatially")
    proj = ProjectionLayer(t_shape[0], s_shape[0], seed=seed, dtype=student.dtype, weight_decay=kp_weight_decay)
    return KPNInstance(student, proj, route)


def teacher_features(teacher: Network, x: np.ndarray, knowledge: Iterable[int]) -> dict[int, Tensor]:
    """Frozen, eval-mode teacher features keyed by conv ordinal (no graph)."""
    taps = conv_taps(teacher.arch)
    wanted = {k: taps[k] for k in set(knowledge)}
    if not wanted:
        return {}
    with no_grad():
        _, caps = teacher.forward(x, training=False, capture=wanted.values(), stop_after=max(wanted.values()))
    return {k: caps[t] for k, t in wanted.items()}


@dataclass
class KPNLosses:
    total: Tensor
    kp: Tensor
    task: Tensor
    lam: float

    def as_floats(self) -> dict:
        return {"kp_loss": float(self.kp.data), "task_loss": float(self.task.data), "lambda": self.lam,
                "total": float(self.total.data)}


def _mask(c: KPNInstance, mu: Tensor, r: Tensor, eta: float, mask_source: str) -> np.ndarray:
    if mask_source == "projected":
        return relax_mask(r, eta)
    if mask_source == "teacher-mean":
        return teacher_mean_mask(mu, c.projection.weight.data, eta)
    raise ConfigError(f"unknown mask source {mask_source!r}")


def kpn_losses(
    c: KPNInstance,
    x,
    y,
    mu: Tensor,
    mode: str,
    lam: float,
    eta: float = 0.25,
    mask_source: str = "projected",
    training: bool = True,
) -> KPNLosses:
    """Forward one batch in ``mode`` and assemble ``lam * guidance + task``."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    tap = c.injection_tap
    r = project(mu, c.projection)
    if mode == "joint":
        logits, caps = c.student.forward(x, training, capture=[tap])
        v = caps[tap]
        target = r
    else:
        logits, caps = c.student.forward(x, training, capture=[tap], replace=(tap, r))
        v = caps[tap]
        target = r.detach()
    if v.shape != r.shape:
        raise ShapeError(f"route {c.route.label}: projected {r.shape} vs injection {v.shape}")
    kp = kp_loss(None, target, v, eta, mask=_mask(c, mu, r, eta, mask_source))
    task = F.softmax_cross_entropy(logits, y)
    total = F.add(F.mul(kp, lam), task)
    return KPNLosses(total, kp, task, float(lam))


def evaluate_joint_loss(
    c: KPNInstance,
    teacher: Network,
    batches: Iterable[tuple[np.ndarray, np.ndarray]],
    lam: float,
    eta: float = 0.25,
    mask_source: str = "projected",
    mode: str = "joint",
) -> float:
    """Mean over batches of ``lam * guidance + task`` in eval mode; stored on ``c``."""
    totals = []
    with no_grad():
        for x, y in batches:
            mu = teacher_features(teacher, x, [c.route.knowledge])[c.route.knowledge]
            totals.append(float(kpn_losses(c, x, y, mu, mode, lam, eta, mask_source, training=False).total.data))
    c.validation_joint_loss = float(np.mean(totals)) if totals else float("nan")
    return c.validation_joint_loss


def separate_gradients(
    c: KPNInstance,
    x,
    y,
    mu: Tensor,
    mode: str,
    lam: float = 1.0,
    eta: float = 0.25,
    mask_source: str = "projected",
) -> dict[str, dict[str, np.ndarray]]:
    """Gradients of the guidance and task losses taken apart.

    Returns ``{"kp": {...}, "task": {...}}`` keyed like
    :meth:`KPNInstance.named_parameters`.  The ``"kp"`` entry is the
    gradient of ``lam * guidance``, i.e. the update direction it contributes
    to each parameter (notably the injection conv).  Running batchnorm
    statistics are restored afterwards.
    """
    named = c.named_parameters()
    saved_bn = {k: (s.running_mean.copy(), s.running_var.copy()) for k, s in c.student.bn_states.items()}
    out = {}
    for part in ("kp", "task"):
        for p in named.values():
            p.grad = None
        losses = kpn_losses(c, x, y, mu, mode, lam, eta, mask_source)
        target = F.mul(losses.kp, lam) if part == "kp" else losses.task
        target.backward()
        out[part] = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in named.items()}
    for p in named.values():
        p.grad = None
    for k, (m, v) in saved_bn.items():
        c.student.bn_states[k].running_mean[...] = m
        c.student.bn_states[k].running_var[...] = v
    return out
