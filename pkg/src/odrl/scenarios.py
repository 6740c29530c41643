"""Procedural scenario suites and the nominal expert motion along a route.

General scenarios are curved routes with ambient traffic that never
conflicts with the nominal expert. Safety-critical scenarios are straight
routes with one adversary timed to hit an ego that ignores it, cycling
through side approach, frontal cut-in and a lead vehicle stopping in lane.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .geometry import Polyline, Pose2D
from .seeding import derive_seed
from .simulator import AgentKind, AgentScript, Archetype, ScenarioSpec, Suite

ROAD_HALFWIDTH = 5.0
LANE_OFFSET = 4.0
PARKED_OFFSET = -4.2
VEHICLE_HALF = (2.25, 1.0)
PARKED_HALF = (2.25, 0.95)
PEDESTRIAN_HALF = (0.3, 0.3)
BARRIER_HALF = (2.0, 0.25)
BARRIER_PITCH = 5.0
EXPERT_ACCEL = 1.5
SAFETY_MAX_STEPS = 40
# urban speeds (m/s), the regime where an imitation weight of 0.1 and a -10 event
# penalty make stopping and colliding comparably costly
GENERAL_CRUISE = (4.0, 8.0)
SAFETY_CRUISE = (4.5, 7.0)
ARCHETYPE_CYCLE = (Archetype.SIDE_APPROACH, Archetype.FRONTAL, Archetype.STATIONARY_IN_LANE)


class ExpertMotion:
    """Nominal expert longitudinal profile: accelerate from the initial speed to cruise."""

    def __init__(self, spec: ScenarioSpec, accel: float = EXPERT_ACCEL):
        self.v0 = spec.initial_speed()
        self.cruise = spec.cruise_speed
        self.accel = accel
        self.t_acc = max(self.cruise - self.v0, 0.0) / accel
        self.s_acc = self.v0 * self.t_acc + 0.5 * accel * self.t_acc**2

    def arclength(self, t):
        t = np.asarray(t, dtype=float)
        ramp = self.v0 * t + 0.5 * self.accel * t**2
        cruise = self.s_acc + self.cruise * (t - self.t_acc)
        return np.where(t <= self.t_acc, ramp, cruise)

    def speed(self, t):
        t = np.asarray(t, dtype=float)
        return np.minimum(self.v0 + self.accel * t, self.cruise)

    def time_at(self, s: float) -> float:
        if s <= self.s_acc:
            a, v = self.accel, self.v0
            return (-v + math.sqrt(v * v + 2.0 * a * s)) / a if a > 0 else s / v
        return self.t_acc + (s - self.s_acc) / self.cruise


def _frame_pose(route: Polyline, s: float, lateral: float = 0.0, reverse: bool = False) -> Pose2D:
    p = route.point_at(s)
    h = float(route.heading_at(s))
    x = p[0] - math.sin(h) * lateral
    y = p[1] + math.cos(h) * lateral
    return Pose2D(x, y, h + (math.pi if reverse else 0.0))


def _curved_route(rng: np.random.Generator, length: float, spacing: float = 2.0) -> np.ndarray:
    n = int(round(length / spacing))
    kappa = np.zeros(n)
    i = 0
    while i < n:
        run = int(rng.integers(10, 23))
        k = 0.0 if rng.random() < 0.35 else rng.uniform(-0.035, 0.035)
        kappa[i : i + run] = k
        i += run
    heading = rng.uniform(-math.pi, math.pi) + np.concatenate([[0.0], np.cumsum(kappa[:-1] * spacing)])
    steps = spacing * np.stack([np.cos(heading), np.sin(heading)], axis=1)
    origin = rng.uniform(-500.0, 500.0, size=2)
    return origin + np.concatenate([np.zeros((1, 2)), np.cumsum(steps, axis=0)])


def _straight_route(rng: np.random.Generator, length: float, spacing: float = 5.0) -> np.ndarray:
    h = rng.uniform(-math.pi, math.pi)
    origin = rng.uniform(-500.0, 500.0, size=2)
    s = np.arange(0.0, length + 1e-9, spacing)
    if s[-1] < length:
        s = np.append(s, length)
    return origin + s[:, None] * np.array([math.cos(h), math.sin(h)])


def _static(pose: Pose2D, half) -> AgentScript:
    return AgentScript(pose, tuple(half), ((0.0, pose),), AgentKind.STATIC)


def _moving(entries, half, kind=AgentKind.VEHICLE) -> AgentScript:
    entries = tuple((float(t), p) for t, p in entries)
    return AgentScript(entries[0][1], tuple(half), entries, kind)


def _barriers(route: Polyline, halfwidth: float) -> list[AgentScript]:
    lateral = halfwidth + 0.25 + BARRIER_HALF[1]
    out = []
    for s in np.arange(BARRIER_PITCH / 2, route.length + BARRIER_PITCH, BARRIER_PITCH):
        for side in (1.0, -1.0):
            out.append(_static(_frame_pose(route, s, side * lateral), BARRIER_HALF))
    return out


def _along_lane(route: Polyline, s0: float, speed: float, lateral: float, t_end: float, reverse=False, t0=0.0):
    sign = -1.0 if reverse else 1.0
    times = np.arange(t0, t_end + 1e-9, 1.0)
    return [(t, _frame_pose(route, s0 + sign * speed * (t - t0), lateral, reverse)) for t in times]


def _general_scenario(scenario_id: str, seed: int) -> ScenarioSpec:
    rng = np.random.default_rng(seed)
    length = rng.uniform(100.0, 140.0)
    route = Polyline(_curved_route(rng, length))
    cruise = rng.uniform(GENERAL_CRUISE[0], GENERAL_CRUISE[1])
    max_steps = int(math.ceil(1.5 * route.length / (cruise * 0.5))) + 10
    agents = _barriers(route, ROAD_HALFWIDTH)
    horizon = max_steps * 0.5
    if rng.random() < 0.7:
        u = rng.uniform(4.0, 8.0)
        agents.append(_moving(_along_lane(route, rng.uniform(60.0, route.length + 20), u, LANE_OFFSET, horizon, True), VEHICLE_HALF))
    if rng.random() < 0.5:
        u = cruise + rng.uniform(1.0, 3.0)
        agents.append(_moving(_along_lane(route, rng.uniform(30.0, 50.0), u, 0.0, horizon), VEHICLE_HALF))
    for _ in range(int(rng.integers(0, 3))):
        s = rng.uniform(15.0, route.length - 5.0)
        agents.append(_static(_frame_pose(route, s, PARKED_OFFSET), PARKED_HALF))
    if rng.random() < 0.3:
        motion = ExpertMotion(_provisional(scenario_id, seed, route, cruise))
        s_p = rng.uniform(40.0, route.length - 10.0)
        t_end = motion.time_at(s_p) - 2.5
        t_start = t_end - 14.0 / 1.4
        start = _frame_pose(route, s_p, -7.0)
        end = _frame_pose(route, s_p, 7.0)
        walk = math.atan2(end.y - start.y, end.x - start.x)
        a = Pose2D(start.x, start.y, walk)
        b = Pose2D(end.x, end.y, walk)
        agents.append(_moving([(t_start, a), (t_end, b)], PEDESTRIAN_HALF, AgentKind.PEDESTRIAN))
    return ScenarioSpec(scenario_id, Suite.GENERAL, Archetype.NONE, route, ROAD_HALFWIDTH, tuple(agents), max_steps, seed, cruise)


def _provisional(scenario_id, seed, route, cruise, suite=Suite.GENERAL, archetype=Archetype.NONE) -> ScenarioSpec:
    # agent-free copy used to time adversaries against the nominal expert
    return ScenarioSpec(scenario_id, suite, archetype, route, ROAD_HALFWIDTH, (), 1, seed, cruise)


def _safety_scenario(scenario_id: str, seed: int, archetype: Archetype) -> ScenarioSpec:
    rng = np.random.default_rng(seed)
    route = Polyline(_straight_route(rng, rng.uniform(95.0, 110.0)))
    cruise = rng.uniform(SAFETY_CRUISE[0], SAFETY_CRUISE[1])
    motion = ExpertMotion(_provisional(scenario_id, seed, route, cruise, Suite.SAFETY, archetype))
    agents = _barriers(route, ROAD_HALFWIDTH)
    if archetype == Archetype.SIDE_APPROACH:
        s_c = rng.uniform(35.0, 55.0)
        side = 1.0 if rng.random() < 0.5 else -1.0
        u = rng.uniform(5.0, 8.0)
        t_c = motion.time_at(s_c) + rng.uniform(-0.3, 0.3)
        start_lat = -side * max(u * t_c, 12.0)
        t0 = t_c - abs(start_lat) / u
        cross = float(route.heading_at(s_c)) + side * math.pi / 2
        p0 = _frame_pose(route, s_c, start_lat)
        pc = _frame_pose(route, s_c, 0.0)
        p1 = _frame_pose(route, s_c, side * 30.0)
        agents.append(
            _moving(
                [(t0, Pose2D(p0.x, p0.y, cross)), (t_c, Pose2D(pc.x, pc.y, cross)), (t_c + 30.0 / u, Pose2D(p1.x, p1.y, cross))],
                VEHICLE_HALF,
            )
        )
    elif archetype == Archetype.FRONTAL:
        s_stop = rng.uniform(40.0, 60.0)
        u = rng.uniform(4.0, 7.0)
        t_s = max(motion.time_at(s_stop - 4.5) + rng.uniform(-1.0, 0.0), 2.5)
        merge = 2.0
        s_merge = s_stop + merge * u
        s_start = s_merge + u * (t_s - merge)
        agents.append(
            _moving(
                [
                    (0.0, _frame_pose(route, s_start, LANE_OFFSET, reverse=True)),
                    (t_s - merge, _frame_pose(route, s_merge, LANE_OFFSET, reverse=True)),
                    (t_s, _frame_pose(route, s_stop, 0.0, reverse=True)),
                ],
                VEHICLE_HALF,
            )
        )
    elif archetype == Archetype.STATIONARY_IN_LANE:
        gap = rng.uniform(18.0, 28.0)
        u = cruise * rng.uniform(0.8, 1.0)
        t_b = rng.uniform(1.0, 3.0)
        decel = 5.0
        s_b = gap + u * t_b
        agents.append(
            _moving(
                [
                    (0.0, _frame_pose(route, gap)),
                    (t_b, _frame_pose(route, s_b)),
                    (t_b + u / decel, _frame_pose(route, s_b + u * u / (2.0 * decel))),
                ],
                VEHICLE_HALF,
            )
        )
    return ScenarioSpec(scenario_id, Suite.SAFETY, archetype, route, ROAD_HALFWIDTH, tuple(agents), SAFETY_MAX_STEPS, seed, cruise)


def generate_suite(suite: Suite | str, n: int, seed: int) -> list[ScenarioSpec]:
    """``n`` seed-deterministic scenarios; safety archetypes cycle in fixed order."""
    suite = Suite(suite)
    if n < 1:
        raise ValueError("suite size must be >= 1")
    out = []
    for i in range(n):
        s = derive_seed("scenario", suite.value, seed, i)
        if suite == Suite.GENERAL:
            out.append(_general_scenario(f"gen-{i:03d}", s))
        else:
            out.append(_safety_scenario(f"safe-{i:03d}", s, ARCHETYPE_CYCLE[i % len(ARCHETYPE_CYCLE)]))
    return out


def write_suite(specs: list[ScenarioSpec], path, seed: int) -> None:
    suites = sorted({s.suite.value for s in specs})
    doc = {"format": "odrl-suite/1", "seed": seed, "suite": suites[0] if len(suites) == 1 else suites, "scenarios": [s.to_dict() for s in specs]}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_suite(path) -> tuple[list[ScenarioSpec], int]:
    doc = json.loads(Path(path).read_text())
    return [ScenarioSpec.from_dict(d) for d in doc["scenarios"]], int(doc["seed"])
