"""Two-stage KPN training, schedules, teacher/baseline training and export."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import functional as F
from .autodiff import sgd_step, zero_grad
from .checkpoint import TrainLog, load_checkpoint, save_checkpoint
from .data import BatchStream, Dataset, iterate_batches
from .errors import ConfigError, NumericError
from .graph.arch import Architecture
from .kpn import KPNInstance, evaluate_joint_loss, kpn_losses, make_candidate, teacher_features
from .model import Network
from .projection import MASK_SOURCES, ProjectionLayer
from .routes import PRUNE_DIRECTIONS, PruneEvent, Route, enumerate_routes, iterative_prune

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    total_iterations: int = 20000
    batch_size: int = 32
    # (fraction of total iterations, learning rate), piecewise constant
    lr_schedule: list = field(default_factory=lambda: [[0.0, 0.1], [0.5, 0.01], [0.75, 0.001]])
    momentum: float = 0.9
    weight_decay_main: float = 1e-4
    weight_decay_kp_init: float = 1e-3
    weight_decay_kp_joint: float = 0.0
    lambda0: float = 0.6
    eta: float = 0.25
    beta: float = 0.2
    init_fraction: float = 0.4
    prune_period: int = 10000
    prune_direction: str = "worst"
    mask_source: str = "projected"
    revoke_probability: float = 0.1
    revoke_duration: int = 100
    revoke_restores_kp_decay: bool = True
    val_fraction: float = 0.1
    flip_probability: float = 0.0
    eval_every: int = 0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.total_iterations < 1 or self.batch_size < 1:
            raise ConfigError("total_iterations and batch_size must be positive")
        if not 0 <= self.init_fraction <= 1:
            raise ConfigError(f"init_fraction must lie in [0, 1], got {self.init_fraction}")
        for name in ("weight_decay_main", "weight_decay_kp_init", "weight_decay_kp_joint", "lambda0", "beta",
                     "revoke_duration", "prune_period", "momentum"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0 < self.eta <= 1:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if not 0 <= self.revoke_probability <= 1:
            raise ConfigError(f"revoke_probability must lie in [0, 1], got {self.revoke_probability}")
        if self.prune_direction not in PRUNE_DIRECTIONS:
            raise ConfigError(f"prune_direction must be one of {PRUNE_DIRECTIONS}")
        if self.mask_source not in MASK_SOURCES:
            raise ConfigError(f"mask_source must be one of {MASK_SOURCES}")
        if not self.lr_schedule or self.lr_schedule[0][0] != 0:
            raise ConfigError("lr_schedule must start at fraction 0")

    @property
    def init_iterations(self) -> int:
        return int(round(self.init_fraction * self.total_iterations))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def lambda_at(cfg: TrainConfig, iteration: int) -> float:
    """``lambda0`` through the init stage, then linear decay to exactly 0 at the last iteration."""
    last = cfg.total_iterations - 1
    start = cfg.init_iterations
    if iteration < start:
        return cfg.lambda0
    if last <= start:
        return 0.0 if iteration >= last else cfg.lambda0
    frac = (last - min(iteration, last)) / (last - start)
    return cfg.lambda0 * frac


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    frac = iteration / cfg.total_iterations
    lr = cfg.lr_schedule[0][1]
    for start, value in cfg.lr_schedule:
        if frac >= start:
            lr = value
    return lr


@dataclass
class StageState:
    """Current mode (``"init"`` or ``"joint"``) and revocation countdown."""

    cfg: TrainConfig
    iteration: int = 0
    revoke_remaining: int = 0
    revocations: int = 0

    @property
    def mode(self) -> str:
        if self.iteration < self.cfg.init_iterations or self.revoke_remaining > 0:
            return "init"
        return "joint"

    @property
    def revoked(self) -> bool:
        return self.iteration >= self.cfg.init_iterations and self.revoke_remaining > 0

    def advance(self) -> None:
        self.iteration += 1
        if self.revoke_remaining > 0:
            self.revoke_remaining -= 1


def maybe_revoke_init(rng: np.random.Generator, state: StageState, epoch_ended: bool) -> StageState:
    """At an epoch boundary in the joint stage, return to init mode with some probability.

    A revocation only starts when at least ``revoke_duration`` joint iterations
    would remain after it, so training never ends in init mode.
    """
    cfg = state.cfg
    room = cfg.total_iterations - state.iteration >= 2 * cfg.revoke_duration
    if (epoch_ended and state.iteration >= cfg.init_iterations and state.revoke_remaining == 0
            and cfg.revoke_duration > 0 and room and rng.random() < cfg.revoke_probability):
        state.revoke_remaining = cfg.revoke_duration
        state.revocations += 1
        log.debug("iteration %d: revoking init stage for %d iterations", state.iteration, cfg.revoke_duration)
    return state


def _kp_weight_decay(cfg: TrainConfig, state: StageState) -> float:
    if state.iteration < cfg.init_iterations:
        return cfg.weight_decay_kp_init
    if state.revoked and cfg.revoke_restores_kp_decay:
        return cfg.weight_decay_kp_init
    return cfg.weight_decay_kp_joint


def _finite(value: float, what: str) -> None:
    if not math.isfinite(value):
        raise NumericError(f"{what} is {value}")


def kpn_step(c: KPNInstance, x, y, mu, cfg: TrainConfig, state: StageState) -> dict:
    """One SGD step for candidate ``c`` in its current stage; returns logged values."""
    mode = state.mode
    lam = lambda_at(cfg, state.iteration)
    c.projection.weight.weight_decay = _kp_weight_decay(cfg, state)
    params = c.parameters()
    zero_grad(params)
    losses = kpn_losses(c, x, y, mu, mode, lam, cfg.eta, cfg.mask_source, training=True)
    values = losses.as_floats()
    if math.isfinite(values["total"]):
        losses.total.backward()
        sgd_step(params, lr_at(cfg, state.iteration), cfg.momentum)
    return {"stage": mode, **values}


def init_stage_step(c: KPNInstance, x, y, mu, cfg: TrainConfig, state: StageState) -> dict:
    if state.mode != "init":
        raise ConfigError(f"init_stage_step called at iteration {state.iteration} in {state.mode} stage")
    return kpn_step(c, x, y, mu, cfg, state)


def joint_stage_step(c: KPNInstance, x, y, mu, cfg: TrainConfig, state: StageState) -> dict:
    if state.mode != "joint":
        raise ConfigError(f"joint_stage_step called at iteration {state.iteration} in {state.mode} stage")
    return kpn_step(c, x, y, mu, cfg, state)


def plain_step(net: Network, x, y, lr: float, momentum: float) -> float:
    params = net.parameters()
    zero_grad(params)
    logits, _ = net.forward(x, training=True)
    loss = F.softmax_cross_entropy(logits, y)
    value = float(loss.data)
    if math.isfinite(value):
        loss.backward()
        sgd_step(params, lr, momentum)
    return value


def train_plain(
    arch: Architecture,
    train: Dataset,
    cfg: TrainConfig,
    val: Optional[Dataset] = None,
    log_to: Optional[TrainLog] = None,
    net: Optional[Network] = None,
) -> Network:
    """Standard supervised SGD on the task loss; the no-guidance baseline."""
    net = net or Network(arch, seed=cfg.seed, weight_decay=cfg.weight_decay_main)
    stream = BatchStream(train, cfg.batch_size, seed=cfg.seed + 1, flip_probability=cfg.flip_probability)
    for it in range(cfg.total_iterations):
        x, y, _ = stream.next()
        loss = plain_step(net, x, y, lr_at(cfg, it), cfg.momentum)
        _finite(loss, f"task loss at iteration {it}")
        if log_to is not None:
            val_acc = _maybe_eval(net, val, cfg, it)
            log_to.write(iter=it, stage="plain", **{"lambda": 0.0}, kp_loss=None, task_loss=loss, val_acc=val_acc)
    return net


def train_teacher(arch: Architecture, train: Dataset, cfg: TrainConfig, test: Optional[Dataset] = None,
                  log_to: Optional[TrainLog] = None) -> Network:
    """Train then freeze a teacher; logs final accuracy when ``test`` is given."""
    net = train_plain(arch, train, cfg, val=test, log_to=log_to)
    if test is not None:
        log.info("teacher %s: test accuracy %.4f", arch.name, net.accuracy(test.images, test.labels))
    return net.freeze()


def _maybe_eval(net: Network, val: Optional[Dataset], cfg: TrainConfig, it: int) -> Optional[float]:
    if val is None or not len(val):
        return None
    last = it == cfg.total_iterations - 1
    if last or (cfg.eval_every and (it + 1) % cfg.eval_every == 0):
        return net.accuracy(val.images, val.labels)
    return None


@dataclass
class KPNResult:
    survivor: KPNInstance
    routes: list[Route]
    events: list[PruneEvent]
    log: TrainLog
    revocations: int = 0


def train_kpn(
    teacher: Network,
    student_arch: Architecture,
    train: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    routes: Optional[Sequence[Route]] = None,
    log_to: Optional[TrainLog] = None,
    race_only: bool = False,
) -> KPNResult:
    """Enumerate routes, race them, then finish two-stage training of the survivor.

    With ``race_only`` the survivor is returned as soon as the race ends.

    All candidates start from the same student initialization and see the
    same batches; the teacher runs once per batch for all of them.  The
    race spends ``(len(routes) - 1) * prune_period`` iterations, counted per
    candidate, and must finish before ``total_iterations``.
    """
    log_to = log_to or TrainLog()
    routes = list(routes) if routes is not None else enumerate_routes(teacher.arch, student_arch, cfg.beta)
    if not routes:
        raise ConfigError(f"no admissible projection routes between {teacher.arch.name} and {student_arch.name}")
    race_iters = (len(routes) - 1) * cfg.prune_period
    if race_iters >= cfg.total_iterations:
        raise ConfigError(
            f"{len(routes)} candidates x prune period {cfg.prune_period} needs {race_iters} iterations, "
            f"more than total_iterations={cfg.total_iterations}"
        )

    base = Network(student_arch, seed=cfg.seed, weight_decay=cfg.weight_decay_main)
    candidates = []
    for n, route in enumerate(routes):
        student = base.copy()
        candidates.append(make_candidate(teacher, student, route, seed=cfg.seed * 1000 + n,
                                         kp_weight_decay=cfg.weight_decay_kp_init))
    # one stage clock; candidates train in lockstep
    state = StageState(cfg)
    revoke_rng = np.random.default_rng(cfg.seed + 2)
    stream = BatchStream(train, cfg.batch_size, seed=cfg.seed + 1, flip_probability=cfg.flip_probability)

    def step_all(alive: list[KPNInstance]) -> None:
        x, y, ended = stream.next()
        feats = teacher_features(teacher, x, [c.route.knowledge for c in alive])
        for c in alive:
            rec = kpn_step(c, x, y, feats[c.route.knowledge], cfg, state)
            val_acc = _maybe_eval(c.student, val, cfg, state.iteration) if len(alive) == 1 else None
            log_to.write(iter=state.iteration, val_acc=val_acc, route=c.route.label,
                         **{k: rec[k] for k in ("stage", "lambda", "kp_loss", "task_loss")})
        state.advance()
        maybe_revoke_init(revoke_rng, state, ended)

    def evaluate(c: KPNInstance) -> float:
        return evaluate_joint_loss(c, teacher, iterate_batches(val, 256), lambda_at(cfg, state.iteration),
                                   cfg.eta, cfg.mask_source, mode=state.mode)

    survivor, events = iterative_prune(candidates, cfg.prune_period, step_all, evaluate, cfg.prune_direction)
    for ev in events:
        log_to.write(iter=ev.iteration, stage="prune", **{"lambda": lambda_at(cfg, ev.iteration)},
                     kp_loss=None, task_loss=None, val_acc=None, event=ev.to_dict())

    while not race_only and state.iteration < cfg.total_iterations:
        step_all([survivor])
        last = log_to.records[-1]
        if not math.isfinite(last["task_loss"]) or not math.isfinite(last["kp_loss"]):
            raise NumericError(f"loss became non-finite at iteration {last['iter']}")
    return KPNResult(survivor, routes, events, log_to, state.revocations)


def export_student(c: KPNInstance) -> Network:
    """Standalone copy of the student; projection and teacher references dropped."""
    net = c.student.copy()
    for p in net.parameters():
        p.learnable = True
        p.requires_grad = True
    return net


# checkpoint helpers


def save_network(path, net: Network, kind: str = "network", **meta) -> None:
    save_checkpoint(path, net.state_dict(), {"kind": kind, "arch": net.arch.to_dict(), **meta})


def load_network(path) -> Network:
    meta, tensors = load_checkpoint(path)
    if "arch" not in meta:
        raise ConfigError(f"{path}: checkpoint has no architecture")
    arch = Architecture.from_dict(meta["arch"])
    if meta.get("kind") == "kpn":
        tensors = {k[len("student/"):]: v for k, v in tensors.items() if k.startswith("student/")}
    net = Network(arch)
    net.load_state_dict(tensors)
    return net


def save_kpn(path, c: KPNInstance, teacher_arch: Architecture, cfg: TrainConfig, iteration: int,
             events: Sequence[PruneEvent] = ()) -> None:
    tensors = {f"student/{k}": v for k, v in c.student.state_dict().items()}
    tensors["projection/weight"] = c.projection.weight.data.copy()
    meta = {
        "kind": "kpn",
        "arch": c.student.arch.to_dict(),
        "teacher_arch": teacher_arch.to_dict(),
        "route": c.route.to_dict(),
        "config": cfg.to_dict(),
        "iteration": iteration,
        "prune_events": [e.to_dict() for e in events],
    }
    save_checkpoint(path, tensors, meta)


def load_kpn(path) -> tuple[KPNInstance, dict]:
    meta, tensors = load_checkpoint(path)
    if meta.get("kind") != "kpn":
        raise ConfigError(f"{path}: not a KPN checkpoint (kind={meta.get('kind')!r})")
    student = load_network(path)
    w = tensors["projection/weight"]
    proj = ProjectionLayer(w.shape[1], w.shape[0])
    proj.weight.data[...] = w
    r = meta["route"]
    route = Route(r["knowledge"], r["injection"], r["teacher_rf"], r["student_rf"], tuple(r["spatial"]))
    return KPNInstance(student, proj, route), meta
