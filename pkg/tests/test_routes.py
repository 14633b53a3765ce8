import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpnet.errors import ConfigError, NumericError
from kpnet.graph import Architecture
from kpnet.graph.arch import act, bn, conv
from kpnet.routes import Route, enumerate_routes, iterative_prune, rf_admissible

from oracles.route_scan import admissible_pairs
from support import random_conv_arch


def hand_built_pair():
    """Teacher 5x5/s2, 3x3/s2, 3x3/s2; student 1x1, 1x1/s2, 3x3, 1x1, 3x3/s2, 3x3 on 28x28."""
    teacher = Architecture("hand-teacher", (1, 28, 28), (
        conv(8, 5, 2), bn(), act(), conv(16, 3, 2), bn(), act(), conv(32, 3, 2), bn(), act()))
    student = Architecture("hand-student", (1, 28, 28), (
        conv(4, 1), bn(), act(), conv(4, 1, 2), bn(), act(), conv(8, 3), bn(), act(),
        conv(8, 1), bn(), act(), conv(16, 3, 2), bn(), act(), conv(16, 3), bn(), act()))
    return teacher, student


def test_hand_built_pair_routes():
    teacher, student = hand_built_pair()
    routes = enumerate_routes(teacher, student, 0.2)
    assert {(r.knowledge, r.injection) for r in routes} == {(1, 3), (1, 4), (2, 5)}
    for r in routes:
        assert r.spatial in ((14, 14), (7, 7))


def test_interval_for_s_ten():
    admitted = [s for s in range(0, 20) if rf_admissible(10, s, 0.2)]
    assert admitted == list(range(8, 13))


def test_identical_architectures_with_zero_tolerance():
    teacher, _ = hand_built_pair()
    routes = enumerate_routes(teacher, teacher, 0.0)
    assert {(r.knowledge, r.injection) for r in routes} == {(1, 1), (2, 2), (3, 3)}


def test_empty_result_is_not_an_error():
    a = Architecture("a", (1, 8, 8), (conv(2, 3, 2),))
    b = Architecture("b", (1, 8, 8), (conv(2, 1),))
    assert enumerate_routes(a, b, 0.2) == []


def test_resolution_mismatch_rejected():
    a = Architecture("a", (1, 8, 8), (conv(2, 3),))
    b = Architecture("b", (1, 9, 9), (conv(2, 3),))
    with pytest.raises(ConfigError):
        enumerate_routes(a, b, 0.2)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([0.0, 0.1, 0.2, 0.25, 0.5, 1.0]))
def test_enumeration_matches_brute_force(seed, beta):
    rng = np.random.default_rng(seed)
    teacher = random_conv_arch(rng, "t")
    student = random_conv_arch(rng, "s")
    got = enumerate_routes(teacher, student, beta)
    assert {(r.knowledge, r.injection) for r in got} == admissible_pairs(teacher.to_dict(), student.to_dict(), beta)
    for r in got:
        lo, hi = (1 - beta) * r.teacher_rf, (1 + beta) * r.teacher_rf
        assert lo - 1e-9 <= r.student_rf <= hi + 1e-9


# pruning race


class Rigged:
    def __init__(self, name, loss):
        self.name, self.loss = name, loss
        self.validation_joint_loss = None
        self.steps = 0


def race(losses, direction="worst", period=3):
    cands = [Rigged(f"c{i}", l) for i, l in enumerate(losses)]

    def train(alive):
        for c in alive:
            c.steps += 1

    survivor, events = iterative_prune(cands, period, train, lambda c: c.loss, direction, label=lambda c: c.name)
    return cands, survivor, events


def test_rigged_race_keeps_lowest_loss():
    cands, survivor, events = race([0.9, 0.5, 0.1])
    assert survivor.loss == 0.1
    assert [e.pruned for e in events] == ["c0", "c1"]
    assert [e.round for e in events] == [1, 2]
    assert survivor.steps == 6 and cands[0].steps == 3


def test_paper_literal_direction_removes_best():
    _, survivor, events = race([0.9, 0.5, 0.1], "paper-literal")
    assert survivor.loss == 0.9
    assert [e.pruned for e in events] == ["c2", "c1"]


def test_single_candidate_returns_immediately():
    cands, survivor, events = race([0.4])
    assert survivor is cands[0] and events == [] and survivor.steps == 0


def test_empty_race_is_config_error():
    with pytest.raises(ConfigError):
        iterative_prune([], 1, lambda a: None, lambda c: 0.0)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=9, unique=True))
def test_race_invariants(losses):
    cands, survivor, events = race(losses)
    assert survivor.loss == min(losses)
    assert len(events) == len(losses) - 1
    # survivor's recorded loss is the minimum of the final round
    if events:
        assert survivor.validation_joint_loss == min(events[-1].losses.values())
    for e in events:
        assert e.losses[e.pruned] == max(e.losses.values())


def test_nan_candidate_pruned_with_warning(caplog):
    _, survivor, events = race([0.3, math.nan, 0.2, 0.6])
    assert events[0].pruned == "c1" and events[0].reason == "non-finite"
    assert survivor.loss == 0.2
    assert len(events) == 3
    assert "non-finite" in caplog.text or "nan" in caplog.text.lower()


def test_all_nan_is_numeric_error():
    with pytest.raises(NumericError):
        race([math.nan, math.nan])


def test_route_equality_ignores_metadata():
    assert Route(1, 2, 5, 6, (7, 7)) == Route(1, 2)
    assert Route(1, 2).label == "R1,2"
