"""Pseudo-expert actions from clean expert logs.

For an arbitrary ego pose the two nearest log waypoints (adjacent in log
order) are found, their future trajectories are re-expressed in the current
ego frame and blended by the ego's projection onto the segment joining
them. The blended reference is then snapped to the nearest vocabulary
prototype.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptFile, LengthMismatch
from .geometry import Pose2D, from_frame, to_frame
from .scenarios import ExpertMotion
from .simulator import DEFAULT_SIM, ScenarioSpec, SimConfig
from .vocabulary import ActionVocabulary, nearest_prototype


@dataclass(frozen=True, eq=False)
class ExpertLog:
    scenario_id: str
    times: np.ndarray  # N
    poses: np.ndarray  # N x 3 (x, y, heading), global
    futures: np.ndarray  # N x T x 2, each in its own waypoint frame

    def __post_init__(self):
        if len(self.poses) != len(self.futures) or len(self.times) != len(self.poses):
            raise ValueError("every log waypoint needs a timestamp and a future")
        for name in ("times", "poses", "futures"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.futures.shape[1]

    def pose(self, i: int) -> Pose2D:
        return Pose2D(*self.poses[i])

    def __eq__(self, other):
        return (
            isinstance(other, ExpertLog)
            and self.scenario_id == other.scenario_id
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.poses, other.poses)
            and np.array_equal(self.futures, other.futures)
        )


@dataclass(frozen=True)
class PseudoExpertLabel:
    action_index: int
    reference: np.ndarray
    match_distance: float  # squared Euclidean distance, m^2


def build_expert_log(spec: ScenarioSpec, sim: SimConfig = DEFAULT_SIM) -> ExpertLog:
    """Nominal expert drive along the route, oblivious to other agents."""
    motion = ExpertMotion(spec)
    route = spec.route
    n = int(math.ceil(motion.time_at(route.length) / sim.dt)) + 1
    times = np.arange(n + 1) * sim.dt
    s = motion.arclength(times)
    xy = route.point_at(s)
    heading = route.heading_at(s)
    poses = np.column_stack([xy, heading])
    k = np.arange(1, sim.horizon + 1) * sim.dt
    futures = np.empty((len(times), sim.horizon, 2))
    for i, t in enumerate(times):
        fut = route.point_at(motion.arclength(t + k))
        futures[i] = to_frame(fut, Pose2D(*poses[i]))
    return ExpertLog(spec.scenario_id, times, poses, futures)


def _segment(ego_xy: np.ndarray, log: ExpertLog) -> tuple[int, int]:
    d2 = ((log.poses[:, :2] - ego_xy) ** 2).sum(1)
    i = int(np.argmin(d2))
    if i == 0:
        return 0, 1
    if i == len(d2) - 1:
        return i - 1, i
    return (i - 1, i) if d2[i - 1] <= d2[i + 1] else (i, i + 1)


def _future_in_ego(log: ExpertLog, i: int, ego: Pose2D) -> np.ndarray:
    return to_frame(from_frame(log.futures[i], log.pose(i)), ego)


def interpolate_reference(ego: Pose2D, log: ExpertLog) -> np.ndarray:
    if len(log.poses) < 2:
        raise ValueError("expert log needs at least two waypoints")
    ego_xy = ego.position
    a, b = _segment(ego_xy, log)
    pa, pb = log.poses[a, :2], log.poses[b, :2]
    seg = pb - pa
    seg2 = float(seg @ seg)
    if seg2 == 0.0:
        # degenerate log: both waypoints coincide, use the nearer one's future as is
        return _future_in_ego(log, a, ego)
    lam = min(max(float((ego_xy - pa) @ seg) / seg2, 0.0), 1.0)
    return (1.0 - lam) * _future_in_ego(log, a, ego) + lam * _future_in_ego(log, b, ego)


def pseudo_expert_action(ego: Pose2D, log: ExpertLog, vocab: ActionVocabulary) -> PseudoExpertLabel:
    if log.T != vocab.T:
        raise LengthMismatch(f"expert log horizon {log.T} != vocabulary T {vocab.T}")
    ref = interpolate_reference(ego, log)
    idx, dist = nearest_prototype(vocab, ref)
    return PseudoExpertLabel(idx, ref, dist * dist)


def write_expert_log(log: ExpertLog, path) -> None:
    doc = {
        "format": "odrl-expert-log/1",
        "scenario_id": log.scenario_id,
        "T": log.T,
        "times": log.times.tolist(),
        "poses": log.poses.tolist(),
        "futures": log.futures.tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_expert_log(path) -> ExpertLog:
    try:
        doc = json.loads(Path(path).read_text())
        return ExpertLog(doc["scenario_id"], doc["times"], doc["poses"], doc["futures"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"{path}: not an expert log ({exc})") from exc
