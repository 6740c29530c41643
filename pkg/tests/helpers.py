"""Shared fixtures: straight-road scenarios and a small hand-built arc vocabulary."""

from __future__ import annotations

import numpy as np

from odrl.geometry import Polyline, Pose2D
from odrl.simulator import AgentKind, AgentScript, Archetype, ScenarioSpec, Suite
from odrl.vocabulary import ActionVocabulary


def straight_spec(agents=(), length=100.0, max_steps=60, halfwidth=5.0, seed=3, cruise=6.0, scenario_id="t"):
    return ScenarioSpec(scenario_id, Suite.GENERAL, Archetype.NONE, Polyline([(0, 0), (length, 0)]), halfwidth, tuple(agents), max_steps, seed, cruise)


def static(x, y, half=(1.0, 1.0), h=0.0):
    p = Pose2D(x, y, h)
    return AgentScript(p, half, ((0.0, p),), AgentKind.STATIC)


def arc(speed, curvature, T=6, dt=0.5):
    s = speed * dt * np.arange(1, T + 1)
    if curvature == 0.0:
        return np.column_stack([s, np.zeros(T)])
    return np.column_stack([np.sin(curvature * s) / curvature, (1 - np.cos(curvature * s)) / curvature])


def arc_vocab(speeds=np.arange(0.0, 12.01, 0.5), curvatures=(-0.1, -0.05, -0.02, 0.0, 0.02, 0.05, 0.1), T=6):
    protos = [arc(0.0, 0.0, T)]
    for v in speeds:
        if v == 0.0:
            continue
        for c in curvatures:
            protos.append(arc(float(v), c, T))
    return ActionVocabulary(np.array(protos), "arc-test-vocab", 0)


def toy_mdp_dataset(n=400, seed=0):
    """Two states, two actions, uniform behavior; the optimum is known by value iteration.

    In state 0, action 0 stays put for -0.2 while action 1 pays -1 to reach
    state 1. In state 1, action 0 stays for free and action 1 returns to
    state 0 for -0.2. Nothing terminates. With gamma = 0.9 the greedy
    one-step choice in state 0 (action 0) is wrong: action 1 is optimal there,
    and action 0 is optimal in state 1.
    """
    from odrl.datasets import OfflineDataset, Transition

    R, NEXT = TOY_REWARD, TOY_NEXT
    rng = np.random.default_rng(seed)
    vocab = ActionVocabulary(np.array([arc(4.0, 0.0), arc(4.0, 0.05)]), "toy", 0)
    ts = []
    for i in range(n):
        s = int(rng.integers(2))
        a = int(rng.integers(2))
        ts.append(Transition(np.eye(2)[s], a, float(R[s, a]), np.eye(2)[NEXT[s, a]], 0, a, i, 0, 0))
    return OfflineDataset.from_transitions(ts, vocab.hash), vocab


TOY_REWARD = np.array([[-0.2, -1.0], [0.0, -0.2]])
TOY_NEXT = np.array([[0, 1], [1, 0]])


def value_iteration(R=TOY_REWARD, nxt=TOY_NEXT, gamma=0.9, iters=1000):
    """Tabular Q* of a deterministic MDP given reward and next-state tables."""
    Q = np.zeros_like(R)
    for _ in range(iters):
        Q = R + gamma * Q.max(1)[nxt]
    return Q
