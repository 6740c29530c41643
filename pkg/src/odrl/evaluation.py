"""Closed-loop evaluation: greedy rollouts, CR / RC / jerk, unified SRC and JSR, ablation sweeps."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptySet, HashMismatch, OutOfRange, TooShort
from .neural import NetworkCheckpoint, forward
from .simulator import EpisodeLog, Event, ScenarioSpec, Suite, build_world, observe, step
from .vocabulary import ActionVocabulary


def greedy_index(logits) -> int:
    """argmax with ties to the lowest index."""
    return int(np.argmax(np.asarray(logits)))


class CheckpointPolicy:
    """Greedy actor policy from a checkpoint; callable on a world state."""

    def __init__(self, ckpt: NetworkCheckpoint, vocab: ActionVocabulary):
        if ckpt.vocab_hash != vocab.hash:
            raise HashMismatch(vocab.hash, ckpt.vocab_hash, "checkpoint vocabulary")
        self.actor = ckpt.actor
        self.mean = np.asarray(ckpt.meta.get("obs_mean", 0.0), dtype=float)
        self.std = np.asarray(ckpt.meta.get("obs_std", 1.0), dtype=float)

    def logits(self, world) -> np.ndarray:
        x = (observe(world).vector() - self.mean) / self.std
        return forward(self.actor, x)[0]

    def __call__(self, world) -> int:
        return greedy_index(self.logits(world))


def run_policy(policy, spec: ScenarioSpec, vocab: ActionVocabulary, sim=None) -> EpisodeLog:
    """Roll out ``policy(world) -> action index`` until a terminal event."""
    world = build_world(spec) if sim is None else build_world(spec, sim)
    log = EpisodeLog(spec.scenario_id)
    log.record(world)
    while not world.done:
        a = policy(world)
        world, events = step(world, vocab.prototypes[a])
        log.record(world, a, events)
    return log


def run_episode(ckpt: NetworkCheckpoint, spec: ScenarioSpec, vocab: ActionVocabulary) -> EpisodeLog:
    return run_policy(CheckpointPolicy(ckpt, vocab), spec, vocab)


def collision_rate(logs) -> float:
    logs = list(logs)
    if not logs:
        raise EmptySet("collision_rate needs at least one episode")
    return sum(lg.terminal_event == Event.COLLISION for lg in logs) / len(logs)


def route_completion(logs) -> float:
    logs = list(logs)
    if not logs:
        raise EmptySet("route_completion needs at least one episode")
    return float(np.mean([min(max(lg.route_progress, 0.0), 1.0) for lg in logs]))


def jerk(log: EpisodeLog, dt: float = 0.5) -> tuple[float, float]:
    """Mean absolute longitudinal and lateral jerk from logged speed and heading."""
    n = len(log.poses)
    if n < 4:
        raise TooShort(f"jerk needs >= 4 logged steps, got {n}")
    h = np.array([p.heading for p in log.poses])
    speed = np.asarray(log.speeds, dtype=float)
    vel = speed[:, None] * np.stack([np.cos(h), np.sin(h)], axis=1)
    acc = (vel[2:] - vel[:-2]) / (2.0 * dt)
    hc = h[1:-1]
    a_long = acc[:, 0] * np.cos(hc) + acc[:, 1] * np.sin(hc)
    a_lat = -acc[:, 0] * np.sin(hc) + acc[:, 1] * np.cos(hc)
    return float(np.mean(np.abs(np.diff(a_long))) / dt), float(np.mean(np.abs(np.diff(a_lat))) / dt)


def unified_metrics(rc_general: float, cr_general: float, cr_safety: float) -> tuple[float, float]:
    for name, v in (("rc_general", rc_general), ("cr_general", cr_general), ("cr_safety", cr_safety)):
        if not 0.0 <= v <= 1.0 or math.isnan(v):
            raise OutOfRange(f"{name}={v} outside [0, 1]")
    return rc_general * (1.0 - cr_safety), (1.0 - cr_general) * (1.0 - cr_safety)


SUMMARY_FIELDS = ("label", "cr_general", "rc_general", "jerk_long", "jerk_lat", "cr_safety", "rc_safety", "src", "jsr")
BREAKDOWN_FIELDS = ("scenario_id", "suite", "archetype", "terminal_event", "route_progress", "steps", "jerk_long", "jerk_lat")


@dataclass
class MetricsReport:
    cr_general: float
    rc_general: float
    jerk_long: float
    jerk_lat: float
    cr_safety: float
    rc_safety: float
    src: float
    jsr: float
    rows: list[dict] = field(default_factory=list)
    label: str = ""

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in SUMMARY_FIELDS}

    def write_csv(self, summary_path, breakdown_path=None) -> None:
        write_rows(summary_path, SUMMARY_FIELDS, [self.summary()])
        if breakdown_path is not None:
            write_rows(breakdown_path, BREAKDOWN_FIELDS, self.rows)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_rows(path, fieldnames, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in fieldnames})


def _row(spec: ScenarioSpec, log: EpisodeLog, dt: float) -> dict:
    try:
        jl, jt = jerk(log, dt)
    except TooShort:
        jl = jt = float("nan")
    return {
        "scenario_id": spec.scenario_id,
        "suite": spec.suite.value,
        "archetype": spec.archetype.value,
        "terminal_event": log.terminal_event.value,
        "route_progress": log.route_progress,
        "steps": len(log.poses) - 1,
        "jerk_long": jl,
        "jerk_lat": jt,
    }


def report_from_logs(general_logs, safety_logs, general, safety, dt: float = 0.5, label: str = "") -> MetricsReport:
    rows = [_row(s, lg, dt) for s, lg in zip(general, general_logs)] + [_row(s, lg, dt) for s, lg in zip(safety, safety_logs)]
    cr_g = collision_rate(general_logs)
    rc_g = route_completion(general_logs)
    cr_s = collision_rate(safety_logs)
    src, jsr = unified_metrics(rc_g, cr_g, cr_s)
    jerks = np.array([(r["jerk_long"], r["jerk_lat"]) for r in rows[: len(general)] if not math.isnan(r["jerk_long"])])
    jl, jt = (float(jerks[:, 0].mean()), float(jerks[:, 1].mean())) if len(jerks) else (0.0, 0.0)
    return MetricsReport(cr_g, rc_g, jl, jt, cr_s, route_completion(safety_logs), src, jsr, rows, label)


def evaluate_policy(policy_factory, general, safety, vocab: ActionVocabulary, label: str = "") -> MetricsReport:
    """``policy_factory(spec)`` returns a fresh ``policy(world) -> index`` per episode."""
    general, safety = list(general), list(safety)
    if not general or not safety:
        raise EmptySet("both evaluation suites must be nonempty")
    g_logs = [run_policy(policy_factory(s), s, vocab) for s in general]
    s_logs = [run_policy(policy_factory(s), s, vocab) for s in safety]
    return report_from_logs(g_logs, s_logs, general, safety, label=label)


def evaluate(ckpt: NetworkCheckpoint, general, safety, vocab: ActionVocabulary, label: str = "") -> MetricsReport:
    policy = CheckpointPolicy(ckpt, vocab)
    return evaluate_policy(lambda spec: policy, general, safety, vocab, label)


class AblationAxis(str, Enum):
    ALPHA = "Alpha"
    REWARD_WEIGHTS = "RewardWeights"
    MIXTURE = "Mixture"


ABLATION_FIELDS = ("axis", "value", "rc_general", "cr_safety", "src", "jerk_long", "jerk_lat", "cr_general", "jsr")


def ablation_sweep(axis, grid, base, workdir=None, progress=None):
    """Train and evaluate one model per grid point with shared seeds.

    ``base`` is a :class:`odrl.pipeline.PipelineConfig`. Grid values are
    alphas (Alpha), ``(w_imitation, w_event)`` pairs (RewardWeights) or
    mixture strings (Mixture). Returns ``(rows, scatter)`` where scatter
    holds ``(rc_general, 1 - cr_safety)`` per grid point.
    """
    from .pipeline import run_point

    axis = AblationAxis(axis)
    grid = list(grid)
    if not grid:
        raise EmptySet("ablation grid is empty")
    rows, scatter = [], []
    for value in grid:
        report = run_point(base, axis, value, workdir=workdir)
        row = {"axis": axis.value, "value": value if isinstance(value, str) else repr(value)}
        row.update({k: getattr(report, k) for k in ABLATION_FIELDS[2:]})
        rows.append(row)
        scatter.append((report.rc_general, 1.0 - report.cr_safety))
        if progress is not None:
            progress(row)
    return rows, scatter
