"""Candidate projection routes and the iterative pruning race."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .errors import ConfigError, NumericError
from .graph.arch import Architecture, resolve
from .graph.complexity import conv_receptive_fields

log = logging.getLogger(__name__)

PRUNE_DIRECTIONS = ("worst", "paper-literal")


@dataclass(frozen=True)
class Route:
    """Teacher conv ordinal ``knowledge`` feeding student conv ordinal ``injection`` (both 1-based)."""

    knowledge: int
    injection: int
    teacher_rf: int = field(default=0, compare=False)
    student_rf: int = field(default=0, compare=False)
    spatial: tuple = field(default=(), compare=False)

    @property
    def label(self) -> str:
        return f"R{self.knowledge},{self.injection}"

    def to_dict(self) -> dict:
        return {
            "knowledge": self.knowledge,
            "injection": self.injection,
            "teacher_rf": self.teacher_rf,
            "student_rf": self.student_rf,
            "spatial": list(self.spatial),
        }


def conv_output_spatial(arch: Architecture) -> dict[int, tuple[int, int]]:
    layers = resolve(arch)
    return {k: layers[i].out_shape[1:] for k, i in enumerate(arch.conv_indices(), start=1)}


def rf_admissible(teacher_rf: int, student_rf: int, beta) -> bool:
    """``(1 - beta) * S_i <= S_j <= (1 + beta) * S_i`` evaluated exactly."""
    b = Fraction(repr(beta)) if isinstance(beta, float) else Fraction(beta)
    return (1 - b) * teacher_rf <= student_rf <= (1 + b) * teacher_rf


def enumerate_routes(teacher: Architecture, student: Architecture, beta: float = 0.2) -> list[Route]:
    """Every (teacher conv, student conv) pair with equal output H×W and compatible receptive field.

    Returns an empty list when nothing qualifies; the caller decides whether
    that is fatal.
    """
    if beta < 0:
        raise ConfigError(f"beta must be nonnegative, got {beta}")
    if teacher.input_shape[1:] != student.input_shape[1:]:
        raise ConfigError(
            f"teacher input {teacher.input_shape} and student input {student.input_shape} differ in resolution"
        )
    t_rf, s_rf = conv_receptive_fields(teacher), conv_receptive_fields(student)
    t_sp, s_sp = conv_output_spatial(teacher), conv_output_spatial(student)
    routes = []
    for i, si in t_rf.items():
        for j, sj in s_rf.items():
            if t_sp[i] == s_sp[j] and rf_admissible(si, sj, beta):
                routes.append(Route(i, j, si, sj, tuple(t_sp[i])))
    return routes


@dataclass
class PruneEvent:
    round: int
    iteration: int
    losses: dict
    pruned: str
    reason: str

    def to_dict(self) -> dict:
        return {"round": self.round, "iteration": self.iteration, "losses": self.losses,
                "pruned": self.pruned, "reason": self.reason}


def iterative_prune(
    candidates: Sequence,
    period: int,
    train_step: Callable[[list], None],
    evaluate: Callable[[object], float],
    direction: str = "worst",
    label: Callable[[object], str] = lambda c: c.route.label,
    start_iteration: int = 0,
) -> tuple[object, list[PruneEvent]]:
    """Race candidates until one survives.

    Each round runs ``train_step(survivors)`` ``period`` times, then scores
    every survivor with ``evaluate`` (its validation joint loss, also stored
    on ``validation_joint_loss`` when the attribute exists) and removes one:
    the highest loss for ``direction="worst"``, the lowest for
    ``"paper-literal"``.  A candidate scoring NaN is dropped at once.
    Returns the survivor and the list of pruning events (always
    ``len(candidates) - 1`` of them).
    """
    if not candidates:
        raise ConfigError("iterative_prune needs at least one candidate")
    if direction not in PRUNE_DIRECTIONS:
        raise ConfigError(f"prune direction must be one of {PRUNE_DIRECTIONS}, got {direction!r}")
    if period < 0:
        raise ConfigError(f"prune period must be nonnegative, got {period}")
    alive = list(candidates)
    events: list[PruneEvent] = []
    iteration = start_iteration
    rnd = 0
    while len(alive) > 1:
        rnd += 1
        for _ in range(period):
            train_step(alive)
            iteration += 1
        scores = {}
        for c in alive:
            loss = float(evaluate(c))
            if hasattr(c, "validation_joint_loss"):
                c.validation_joint_loss = loss
            scores[id(c)] = loss
        table = {label(c): scores[id(c)] for c in alive}

        bad = [c for c in alive if not math.isfinite(scores[id(c)])]
        if bad:
            if len(bad) == len(alive):
                raise NumericError(f"round {rnd}: every remaining candidate has a non-finite validation loss")
            for c in bad:
                log.warning("round %d: pruning %s, validation loss is %s", rnd, label(c), scores[id(c)])
                events.append(PruneEvent(rnd, iteration, table, label(c), "non-finite"))
                alive.remove(c)
            continue

        pick = max if direction == "worst" else min
        victim = pick(alive, key=lambda c: scores[id(c)])
        log.info("round %d (iter %d): pruning %s, losses %s", rnd, iteration, label(victim), table)
        events.append(PruneEvent(rnd, iteration, table, label(victim), direction))
        alive.remove(victim)
    return alive[0], events
