import math

import numpy as np
import pytest
from helpers import arc_vocab, straight_spec
from hypothesis import given, settings
from hypothesis import strategies as st

from odrl.errors import CorruptFile, LengthMismatch
from odrl.geometry import Polyline, Pose2D, from_frame, to_frame
from odrl.pseudo_expert import (
    ExpertLog,
    build_expert_log,
    interpolate_reference,
    pseudo_expert_action,
    read_expert_log,
    write_expert_log,
)
from odrl.simulator import Archetype, ScenarioSpec, Suite
from odrl.vocabulary import ActionVocabulary, nearest_prototype

VOCAB = arc_vocab()
K = np.arange(1, 7) * 0.5


def straight_log(v=5.0, n=20):
    t = np.arange(n) * 0.5
    poses = np.column_stack([v * t, np.zeros(n), np.zeros(n)])
    fut = np.tile(np.column_stack([v * K, np.zeros(6)]), (n, 1, 1))
    return ExpertLog("straight", t, poses, fut)


def curved_log(seed=0):
    rng = np.random.default_rng(seed)
    pts = [(0.0, 0.0)]
    h = 0.0
    for _ in range(60):
        h += rng.uniform(-0.15, 0.15)
        pts.append((pts[-1][0] + 3 * math.cos(h), pts[-1][1] + 3 * math.sin(h)))
    spec = ScenarioSpec("c", Suite.GENERAL, Archetype.NONE, Polyline(pts), 5.0, (), 80, seed, 6.0)
    return build_expert_log(spec)


def brute_reference(ego, log):
    """Direct transcription: nearest waypoint pair, projection weight, blend."""
    d = [math.dist(ego.position, p[:2]) for p in log.poses]
    i = int(np.argmin(d))
    if i == 0:
        a, b = 0, 1
    elif i == len(d) - 1:
        a, b = i - 1, i
    else:
        a, b = (i - 1, i) if d[i - 1] <= d[i + 1] else (i, i + 1)
    pa, pb = log.poses[a, :2], log.poses[b, :2]
    lam = float(np.clip((ego.position - pa) @ (pb - pa) / ((pb - pa) @ (pb - pa)), 0, 1))
    fa = to_frame(from_frame(log.futures[a], log.pose(a)), ego)
    fb = to_frame(from_frame(log.futures[b], log.pose(b)), ego)
    return (1 - lam) * fa + lam * fb


def test_endpoints_and_midpoint():
    log = curved_log()
    for i in (0, 5, 17):
        ref = interpolate_reference(log.pose(i), log)
        assert np.allclose(ref, log.futures[i], atol=1e-9)
    pa, pb = log.poses[5], log.poses[6]
    mid = Pose2D((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, pa[2])
    fa = to_frame(from_frame(log.futures[5], log.pose(5)), mid)
    fb = to_frame(from_frame(log.futures[6], log.pose(6)), mid)
    assert np.allclose(interpolate_reference(mid, log), (fa + fb) / 2, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 45.0))
def test_straight_constant_speed_log(x):
    ref = interpolate_reference(Pose2D(x, 0.0, 0.0), straight_log())
    assert np.max(np.abs(ref - np.column_stack([5.0 * K, np.zeros(6)]))) < 1e-6


def test_exact_match_gives_zero_distance():
    base = straight_log()
    log = ExpertLog("p12", base.times, base.poses, np.tile(VOCAB.prototypes[12], (len(base.times), 1, 1)))
    label = pseudo_expert_action(log.pose(3), log, VOCAB)
    assert label.action_index == 12 and label.match_distance < 1e-18


def test_matches_brute_force_oracle():
    log = curved_log(1)
    rng = np.random.default_rng(2)
    for _ in range(1000):
        j = rng.integers(len(log.poses))
        x, y, h = log.poses[j]
        ego = Pose2D(x + rng.normal(scale=1.5), y + rng.normal(scale=1.5), h + rng.normal(scale=0.2))
        ref = brute_reference(ego, log)
        assert np.max(np.abs(interpolate_reference(ego, log) - ref)) < 1e-9
        label = pseudo_expert_action(ego, log, VOCAB)
        idx, d = nearest_prototype(VOCAB, ref)
        assert label.action_index == idx and label.match_distance == pytest.approx(d * d, abs=1e-9)


def test_rigid_transform_invariance():
    log = curved_log(3)
    rng = np.random.default_rng(4)
    for _ in range(50):
        g = Pose2D(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-math.pi, math.pi))
        moved_xy = from_frame(log.poses[:, :2], g)
        moved = ExpertLog(log.scenario_id, log.times, np.column_stack([moved_xy, log.poses[:, 2] + g.heading]), log.futures)
        j = rng.integers(len(log.poses))
        ego = Pose2D(log.poses[j, 0] + rng.normal(), log.poses[j, 1] + rng.normal(), log.poses[j, 2] + rng.normal(scale=0.1))
        ego_moved = g.compose(ego)
        a = pseudo_expert_action(ego, log, VOCAB)
        b = pseudo_expert_action(ego_moved, moved, VOCAB)
        assert np.max(np.abs(a.reference - b.reference)) < 1e-9
        assert abs(a.match_distance - b.match_distance) < 1e-9
        assert a.action_index == b.action_index or abs(a.match_distance - b.match_distance) < 1e-9


def test_reference_is_lipschitz():
    log = curved_log(5)
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(300):
        j = rng.integers(1, len(log.poses) - 1)
        x, y, h = log.poses[j]
        ego = Pose2D(x + rng.normal(), y + rng.normal(), h)
        step = rng.normal(size=2) * 1e-3
        near = Pose2D(ego.x + step[0], ego.y + step[1], h)
        diff = np.abs(interpolate_reference(near, log) - interpolate_reference(ego, log)).max()
        worst = max(worst, diff / np.linalg.norm(step))
    assert worst < 10.0


def test_horizon_mismatch():
    short = ActionVocabulary(VOCAB.prototypes[:, :5], "short", 0)
    with pytest.raises(LengthMismatch):
        pseudo_expert_action(Pose2D(0, 0, 0), straight_log(), short)


def test_built_log_follows_route():
    log = build_expert_log(straight_spec(length=60.0))
    assert np.all(np.abs(log.poses[:, 1]) < 1e-9) and np.all(np.diff(log.poses[:, 0]) >= 0)
    assert log.poses[-1, 0] >= 60.0 - 1e-9
    assert np.all(np.abs(log.futures[:, :, 1]) < 1e-9)


def test_log_round_trip(tmp_path):
    log = curved_log()
    path = tmp_path / "log.json"
    write_expert_log(log, path)
    assert read_expert_log(path) == log
    path.write_text("[]")
    with pytest.raises(CorruptFile):
        read_expert_log(path)
