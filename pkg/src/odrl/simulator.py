"""Deterministic closed-loop 2D driving world.

The ego is a kinematic point tracker: each control step it turns toward the
first waypoint of the chosen trajectory (yaw-rate limited) and sets its
speed so that it would cover the waypoint distance in one step. Other
agents replay piecewise-linear schedules. All state is immutable; ``step``
returns a new :class:`WorldState`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, SteppedTerminal
from .geometry import (
    OrientedBox,
    Polyline,
    Pose2D,
    boxes_to_arrays,
    obb_intersects,
    project_onto_polyline,
    ray_box_distances,
    ray_segment_distances,
    to_frame,
    wrap_angle,
)
from .seeding import rng_for


class Suite(str, Enum):
    GENERAL = "General"
    SAFETY = "SafetyCritical"


class Archetype(str, Enum):
    SIDE_APPROACH = "SideApproach"
    FRONTAL = "Frontal"
    STATIONARY_IN_LANE = "StationaryInLane"
    NONE = "None"


class AgentKind(str, Enum):
    VEHICLE = "Vehicle"
    PEDESTRIAN = "Pedestrian"
    STATIC = "StaticObstacle"


class Event(str, Enum):
    NONE = "None"
    COLLISION = "Collision"
    OFF_ROAD = "OffRoad"
    OFF_ROUTE = "OffRoute"
    TIMEOUT = "Timeout"
    ROUTE_COMPLETE = "RouteComplete"


# single-cause attribution order for simultaneous events
EVENT_PRECEDENCE = (Event.COLLISION, Event.OFF_ROAD, Event.OFF_ROUTE, Event.ROUTE_COMPLETE, Event.TIMEOUT)


def terminal_event(events) -> Event:
    for ev in EVENT_PRECEDENCE:
        if ev in events:
            return ev
    return Event.NONE


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.5
    horizon: int = 6
    v_max: float = 15.0
    yaw_rate_max: float = 1.0
    ego_half_extents: tuple[float, float] = (2.25, 1.0)
    n_rays: int = 16
    ray_range: float = 30.0
    n_nearest_agents: int = 4
    completion_fraction: float = 0.99
    offroute_factor: float = 2.0
    preview_distances: tuple[float, float, float] = (5.0, 10.0, 20.0)

    @property
    def obs_dim(self) -> int:
        return self.n_rays + 1 + 5 + 4 * self.n_nearest_agents


DEFAULT_SIM = SimConfig()


@dataclass(frozen=True)
class AgentScript:
    initial_pose: Pose2D
    half_extents: tuple[float, float]
    schedule: tuple[tuple[float, Pose2D], ...]
    kind: AgentKind = AgentKind.VEHICLE

    def __post_init__(self):
        times = [t for t, _ in self.schedule]
        if not times:
            raise InvalidSpec("agent schedule is empty")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise InvalidSpec("agent schedule timestamps must be strictly increasing")
        if self.kind == AgentKind.STATIC and len(times) != 1:
            raise InvalidSpec("static obstacles have exactly one schedule entry")
        object.__setattr__(self, "kind", AgentKind(self.kind))
        object.__setattr__(self, "half_extents", tuple(float(h) for h in self.half_extents))

    @cached_property
    def _arrays(self):
        t = np.array([t for t, _ in self.schedule])
        xy = np.array([[p.x, p.y] for _, p in self.schedule])
        h = np.array([p.heading for _, p in self.schedule])
        return t, xy, h

    def pose_at(self, time: float) -> Pose2D:
        t, xy, h = self._arrays
        if time <= t[0]:
            return self.initial_pose if time < t[0] else self.schedule[0][1]
        if time >= t[-1]:
            return self.schedule[-1][1]
        i = int(np.searchsorted(t, time, side="right")) - 1
        lam = (time - t[i]) / (t[i + 1] - t[i])
        x, y = xy[i] + lam * (xy[i + 1] - xy[i])
        dh = wrap_angle(h[i + 1] - h[i])
        return Pose2D(x, y, h[i] + lam * dh)

    def velocity_at(self, time: float) -> np.ndarray:
        t, xy, _ = self._arrays
        if len(t) == 1 or time < t[0] or time >= t[-1]:
            return np.zeros(2)
        i = int(np.searchsorted(t, time, side="right")) - 1
        return (xy[i + 1] - xy[i]) / (t[i + 1] - t[i])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "half_extents": list(self.half_extents),
            "initial_pose": [self.initial_pose.x, self.initial_pose.y, self.initial_pose.heading],
            "schedule": [[t, p.x, p.y, p.heading] for t, p in self.schedule],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentScript":
        return cls(
            initial_pose=Pose2D(*d["initial_pose"]),
            half_extents=tuple(d["half_extents"]),
            schedule=tuple((float(t), Pose2D(x, y, h)) for t, x, y, h in d["schedule"]),
            kind=AgentKind(d["kind"]),
        )


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    scenario_id: str
    suite: Suite
    archetype: Archetype
    route: Polyline
    road_halfwidth: float
    agents: tuple[AgentScript, ...]
    max_steps: int
    seed: int
    cruise_speed: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "suite", Suite(self.suite))
        object.__setattr__(self, "archetype", Archetype(self.archetype))
        if not isinstance(self.route, Polyline):
            try:
                object.__setattr__(self, "route", Polyline(self.route))
            except ValueError as exc:
                raise InvalidSpec(f"{self.scenario_id}: bad route: {exc}") from exc
        object.__setattr__(self, "agents", tuple(self.agents))
        if self.suite == Suite.SAFETY and self.archetype == Archetype.NONE:
            raise InvalidSpec("safety-critical scenarios need an archetype")
        if self.suite == Suite.GENERAL and self.archetype != Archetype.NONE:
            raise InvalidSpec("general scenarios have no archetype")
        if self.max_steps < 1:
            raise InvalidSpec("max_steps must be >= 1")
        if self.road_halfwidth <= 0:
            raise InvalidSpec("road_halfwidth must be positive")

    def __eq__(self, other):
        return isinstance(other, ScenarioSpec) and self.to_dict() == other.to_dict()

    @cached_property
    def static_boxes(self):
        boxes = [
            OrientedBox.at_pose(a.schedule[0][1], a.half_extents) for a in self.agents if a.kind == AgentKind.STATIC
        ]
        return boxes, boxes_to_arrays(boxes)

    @cached_property
    def dynamic_agents(self) -> tuple[int, ...]:
        return tuple(i for i, a in enumerate(self.agents) if a.kind != AgentKind.STATIC)

    @cached_property
    def on_road_agents(self) -> tuple[int, ...]:
        """Agents that can reach the carriageway (roadside statics excluded)."""
        keep = []
        for i, a in enumerate(self.agents):
            if a.kind == AgentKind.STATIC:
                lat = abs(project_onto_polyline(a.schedule[0][1].position, self.route).lateral_offset)
                if lat - max(a.half_extents) > self.road_halfwidth:
                    continue
            keep.append(i)
        return tuple(keep)

    @cached_property
    def road_edges(self) -> tuple[np.ndarray, np.ndarray]:
        left = self.route.offset(self.road_halfwidth).points
        right = self.route.offset(-self.road_halfwidth).points
        a = np.concatenate([left[:-1], right[:-1]])
        b = np.concatenate([left[1:], right[1:]])
        return a, b

    def initial_speed(self) -> float:
        """Seed-deterministic starting speed of the ego."""
        return float(rng_for("initial-speed", self.seed).uniform(0.5, 1.0) * self.cruise_speed)

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "suite": self.suite.value,
            "archetype": self.archetype.value,
            "route": self.route.points.tolist(),
            "road_halfwidth": self.road_halfwidth,
            "max_steps": self.max_steps,
            "seed": self.seed,
            "cruise_speed": self.cruise_speed,
            "agents": [a.to_dict() for a in self.agents],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        return cls(
            scenario_id=d["scenario_id"],
            suite=Suite(d["suite"]),
            archetype=Archetype(d["archetype"]),
            route=d["route"],
            road_halfwidth=float(d["road_halfwidth"]),
            agents=tuple(AgentScript.from_dict(a) for a in d["agents"]),
            max_steps=int(d["max_steps"]),
            seed=int(d["seed"]),
            cruise_speed=float(d["cruise_speed"]),
        )


@dataclass(frozen=True)
class WorldState:
    ego_pose: Pose2D
    ego_speed: float
    ego_accel: float
    step_index: int
    agents: tuple[Pose2D, ...]
    done: bool = False
    terminal_event: Event = Event.NONE
    route_progress: float = 0.0
    spec: ScenarioSpec = field(default=None, compare=False, repr=False)
    sim: SimConfig = field(default=DEFAULT_SIM, compare=False, repr=False)

    @property
    def time(self) -> float:
        return self.step_index * self.sim.dt

    def ego_box(self) -> OrientedBox:
        return OrientedBox.at_pose(self.ego_pose, self.sim.ego_half_extents)


def _agent_poses(spec: ScenarioSpec, time: float) -> tuple[Pose2D, ...]:
    return tuple(a.schedule[0][1] if a.kind == AgentKind.STATIC else a.pose_at(time) for a in spec.agents)


def build_world(spec: ScenarioSpec, sim: SimConfig = DEFAULT_SIM) -> WorldState:
    if not isinstance(spec.route, Polyline) or len(spec.route.points) < 2:
        raise InvalidSpec("route needs at least two vertices")
    start = spec.route.points[0]
    pose = Pose2D(start[0], start[1], float(spec.route.heading_at(0.0)))
    return WorldState(
        ego_pose=pose,
        ego_speed=spec.initial_speed(),
        ego_accel=0.0,
        step_index=0,
        agents=_agent_poses(spec, 0.0),
        route_progress=0.0,
        spec=spec,
        sim=sim,
    )


def step(world: WorldState, action, dt: float | None = None) -> tuple[WorldState, frozenset]:
    """Advance one control step tracking the first waypoint of ``action``.

    ``action`` is a T x 2 array of waypoints in the ego frame (or anything
    exposing ``waypoints``).
    """
    if world.done:
        raise SteppedTerminal(f"step {world.step_index}: episode already ended ({world.terminal_event.value})")
    sim = world.sim
    dt = sim.dt if dt is None else dt
    wps = np.asarray(getattr(action, "waypoints", action), dtype=float)
    wx, wy = float(wps[0, 0]), float(wps[0, 1])
    dist = math.hypot(wx, wy)
    pose = world.ego_pose
    if dist < 1e-9:
        heading = pose.heading
        speed = 0.0
    else:
        limit = sim.yaw_rate_max * dt
        turn = min(max(math.atan2(wy, wx), -limit), limit)
        heading = wrap_angle(pose.heading + turn)
        speed = min(max(dist / dt, 0.0), sim.v_max)
    x = pose.x + speed * dt * math.cos(heading)
    y = pose.y + speed * dt * math.sin(heading)
    spec = world.spec
    n = world.step_index + 1
    new_pose = Pose2D(x, y, heading)
    s = project_onto_polyline(new_pose.position, spec.route).arclength
    progress = max(world.route_progress, min(max(s / spec.route.length, 0.0), 1.0))
    nxt = WorldState(
        ego_pose=new_pose,
        ego_speed=speed,
        ego_accel=(speed - world.ego_speed) / dt,
        step_index=n,
        agents=_agent_poses(spec, n * dt),
        route_progress=progress,
        spec=spec,
        sim=sim,
    )
    events = detect_events(nxt, spec)
    ev = terminal_event(events)
    if ev != Event.NONE:
        nxt = replace(nxt, done=True, terminal_event=ev)
    return nxt, events


def _collides(world: WorldState, spec: ScenarioSpec) -> bool:
    ego = world.ego_box()
    reach = math.hypot(*world.sim.ego_half_extents)
    ego_xy = np.array(ego.center)
    boxes, (centers, halves, _) = spec.static_boxes
    if len(boxes):
        near = np.hypot(*(centers - ego_xy).T) <= reach + np.hypot(halves[:, 0], halves[:, 1])
        for i in np.flatnonzero(near):
            if obb_intersects(ego, boxes[i]):
                return True
    for i in spec.dynamic_agents:
        agent = spec.agents[i]
        p = world.agents[i]
        if math.hypot(p.x - ego_xy[0], p.y - ego_xy[1]) > reach + math.hypot(*agent.half_extents):
            continue
        if obb_intersects(ego, OrientedBox.at_pose(p, agent.half_extents)):
            return True
    return False


def detect_events(world: WorldState, spec: ScenarioSpec | None = None) -> frozenset:
    spec = spec or world.spec
    events = set()
    if _collides(world, spec):
        events.add(Event.COLLISION)
    proj = project_onto_polyline(world.ego_pose.position, spec.route)
    lateral = abs(proj.lateral_offset)
    if lateral > spec.road_halfwidth:
        events.add(Event.OFF_ROAD)
    if lateral > world.sim.offroute_factor * spec.road_halfwidth:
        events.add(Event.OFF_ROUTE)
    if proj.arclength >= world.sim.completion_fraction * spec.route.length:
        events.add(Event.ROUTE_COMPLETE)
    if world.step_index >= spec.max_steps:
        events.add(Event.TIMEOUT)
    return frozenset(events)


def ego_boundary_distance(angles: np.ndarray, half_extents) -> np.ndarray:
    """Distance from the ego centre to its own box edge along each ego-frame angle."""
    hl, hw = half_extents
    with np.errstate(divide="ignore"):
        return np.minimum(hl / np.abs(np.cos(angles)), hw / np.abs(np.sin(angles)))


@dataclass(frozen=True)
class Observation:
    rays: np.ndarray
    ego_speed: float
    route_features: np.ndarray
    nearest_agents: np.ndarray

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rays, [self.ego_speed], self.route_features, self.nearest_agents.ravel()])


def observe(world: WorldState, spec: ScenarioSpec | None = None) -> Observation:
    spec = spec or world.spec
    sim = world.sim
    pose = world.ego_pose
    origin = pose.position
    rel_angles = 2.0 * math.pi * np.arange(sim.n_rays) / sim.n_rays
    angles = pose.heading + rel_angles
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    _, (s_centers, s_halves, s_heads) = spec.static_boxes
    dyn = spec.dynamic_agents
    if dyn:
        d_centers = np.array([[world.agents[i].x, world.agents[i].y] for i in dyn])
        d_halves = np.array([spec.agents[i].half_extents for i in dyn])
        d_heads = np.array([world.agents[i].heading for i in dyn])
        centers = np.concatenate([s_centers, d_centers])
        halves = np.concatenate([s_halves, d_halves])
        heads = np.concatenate([s_heads, d_heads])
    else:
        centers, halves, heads = s_centers, s_halves, s_heads
    hit = np.full(sim.n_rays, np.inf)
    if len(centers):
        close = np.hypot(*(centers - origin).T) <= sim.ray_range + 10.0 + np.hypot(halves[:, 0], halves[:, 1])
        if np.any(close):
            hit = ray_box_distances(origin, dirs, centers[close], halves[close], heads[close]).min(axis=1)
    seg_a, seg_b = spec.road_edges
    hit = np.minimum(hit, ray_segment_distances(origin, dirs, seg_a, seg_b))
    clearance = hit - ego_boundary_distance(rel_angles, sim.ego_half_extents)
    rays = np.clip(clearance, 0.0, sim.ray_range)

    proj = project_onto_polyline(origin, spec.route)
    heading_error = wrap_angle(pose.heading - float(spec.route.heading_at(proj.arclength)))
    preview = spec.route.curvature_at(proj.arclength + np.asarray(sim.preview_distances))
    route_features = np.concatenate([[proj.lateral_offset, heading_error], preview])

    nearest = np.zeros((sim.n_nearest_agents, 4))
    if dyn:
        rel = to_frame(d_centers, pose)
        order = np.argsort(np.hypot(rel[:, 0], rel[:, 1]), kind="stable")[: sim.n_nearest_agents]
        t = world.time
        ego_vel = world.ego_speed * np.array([math.cos(pose.heading), math.sin(pose.heading)])
        c, s = math.cos(pose.heading), math.sin(pose.heading)
        for row, j in enumerate(order):
            v = spec.agents[dyn[j]].velocity_at(t) - ego_vel
            nearest[row] = (rel[j, 0], rel[j, 1], c * v[0] + s * v[1], -s * v[0] + c * v[1])
    return Observation(rays=rays, ego_speed=world.ego_speed, route_features=route_features, nearest_agents=nearest)


@dataclass
class EpisodeLog:
    """Per-step record of one closed-loop episode (step 0 is the initial state)."""

    scenario_id: str
    poses: list[Pose2D] = field(default_factory=list)
    speeds: list[float] = field(default_factory=list)
    accels: list[float] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    events: list[tuple[str, ...]] = field(default_factory=list)
    progress: list[float] = field(default_factory=list)
    terminal_event: Event = Event.NONE

    @property
    def route_progress(self) -> float:
        return self.progress[-1] if self.progress else 0.0

    def record(self, world: WorldState, action_index: int = -1, events=()):
        self.poses.append(world.ego_pose)
        self.speeds.append(world.ego_speed)
        self.accels.append(world.ego_accel)
        self.actions.append(int(action_index))
        self.events.append(tuple(sorted(e.value for e in events)))
        self.progress.append(world.route_progress)
        if world.done:
            self.terminal_event = world.terminal_event

    def lines(self):
        for i, pose in enumerate(self.poses):
            yield {
                "step_index": i,
                "x": pose.x,
                "y": pose.y,
                "heading": pose.heading,
                "speed": self.speeds[i],
                "accel": self.accels[i],
                "action_index": self.actions[i],
                "events": list(self.events[i]),
                "progress": self.progress[i],
            }


def write_episode_log(log: EpisodeLog, path) -> None:
    with open(path, "w") as fh:
        for rec in log.lines():
            fh.write(json.dumps(rec) + "\n")


def read_episode_log(path, scenario_id: str | None = None) -> EpisodeLog:
    path = Path(path)
    log = EpisodeLog(scenario_id or path.stem)
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        log.poses.append(Pose2D(rec["x"], rec["y"], rec["heading"]))
        log.speeds.append(rec["speed"])
        log.accels.append(rec["accel"])
        log.actions.append(rec["action_index"])
        log.events.append(tuple(rec["events"]))
        log.progress.append(rec["progress"])
    if log.events:
        log.terminal_event = terminal_event({Event(e) for e in log.events[-1]})
    return log
