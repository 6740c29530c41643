"""Offline dataset collection from behavior-policy mixtures, reward labeling and storage."""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptFile, EmptyMixture, HashMismatch, LengthMismatch
from .geometry import project_onto_polyline, to_frame
from .pseudo_expert import ExpertLog, pseudo_expert_action
from .seeding import rng_for
from .simulator import (
    Event,
    ScenarioSpec,
    WorldState,
    build_world,
    observe,
    step,
    terminal_event,
)
from .vocabulary import ActionVocabulary, nearest_prototype


class PolicyKind(str, Enum):
    NOISY_EXPERT = "NoisyExpert"
    RANDOM = "Random"


@dataclass(frozen=True)
class BehaviorPolicySpec:
    kind: PolicyKind
    sigma: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.sigma < 0 or not math.isfinite(self.sigma):
            raise ConfigError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.weight < 0 or not math.isfinite(self.weight):
            raise ConfigError(f"mixture weight must be finite and >= 0, got {self.weight}")

    @property
    def tag(self) -> str:
        if self.kind == PolicyKind.RANDOM:
            return "random"
        if self.sigma == 0.0:
            return "expert"
        return f"noisy-{self.sigma:g}"


def parse_policy(text: str, weight: float = 1.0) -> BehaviorPolicySpec:
    """``random``, ``expert`` or ``noisy-<sigma>`` (sigma in meters)."""
    t = text.strip().lower()
    if t == "random":
        return BehaviorPolicySpec(PolicyKind.RANDOM, 0.0, weight)
    if t == "expert":
        return BehaviorPolicySpec(PolicyKind.NOISY_EXPERT, 0.0, weight)
    if t.startswith("noisy-"):
        try:
            return BehaviorPolicySpec(PolicyKind.NOISY_EXPERT, float(t[6:]), weight)
        except ValueError:
            pass
    raise ConfigError(f"unknown behavior policy {text!r}")


def parse_mixture(text: str) -> list[BehaviorPolicySpec]:
    """Parse ``"noisy-0.2:1,noisy-0.4:1"`` into specs with weights normalized to sum to 1."""
    items = [s for s in (p.strip() for p in text.split(",")) if s]
    if not items:
        raise EmptyMixture("mixture is empty")
    raw = []
    for item in items:
        name, _, w = item.partition(":")
        try:
            weight = float(w) if w else 1.0
        except ValueError as exc:
            raise ConfigError(f"bad mixture weight in {item!r}") from exc
        raw.append((name, weight))
    return normalize_mixture([parse_policy(n, w) for n, w in raw])


def normalize_mixture(mixture) -> list[BehaviorPolicySpec]:
    mixture = list(mixture)
    total = sum(p.weight for p in mixture)
    if not mixture or total <= 0:
        raise EmptyMixture("mixture has no policy with positive weight")
    return [BehaviorPolicySpec(p.kind, p.sigma, p.weight / total) for p in mixture]


def mixture_to_text(mixture) -> str:
    return ",".join(f"{p.tag}:{p.weight!r}" for p in mixture)


@dataclass(frozen=True)
class RewardConfig:
    w_imitation: float = 0.1
    w_event: float = 1.0
    c_collision: float = -10.0
    c_offroad: float = -10.0
    c_offroute: float = -10.0

    def __post_init__(self):
        for name in ("c_collision", "c_offroad", "c_offroute"):
            if getattr(self, name) > 0:
                raise ConfigError(f"{name} must be <= 0")
        for name in ("w_imitation", "w_event"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")


# scripted expert tuning
EXPERT_ACCEL = 1.5  # m/s^2 speed-up toward cruise
EXPERT_BRAKE = 6.0  # m/s^2 design deceleration when stopping for an obstacle
STOP_BUFFER = 2.0  # m kept between bumpers at standstill
CORRIDOR_MARGIN = 0.5  # m added to the ego half width
LATERAL_BLEND = 8.0  # m of travel over which a lateral offset is removed


def obstacle_gap(world: WorldState, spec: ScenarioSpec, lookahead: float) -> float:
    """Free arclength ahead of the ego bumper to the nearest agent currently in the lane corridor."""
    sim = world.sim
    ego = world.ego_pose
    ego_proj = project_onto_polyline(ego.position, spec.route)
    corridor = sim.ego_half_extents[1] + CORRIDOR_MARGIN
    best = math.inf
    for i in spec.on_road_agents:
        p = world.agents[i]
        dx, dy = p.x - ego.x, p.y - ego.y
        if dx * dx + dy * dy > (lookahead + 8.0) ** 2:
            continue
        proj = project_onto_polyline(p.position, spec.route)
        ahead = proj.arclength - ego_proj.arclength
        rel = p.heading - float(spec.route.heading_at(proj.arclength))
        hl, hw = spec.agents[i].half_extents
        long_ext = abs(hl * math.cos(rel)) + abs(hw * math.sin(rel))
        lat_ext = abs(hl * math.sin(rel)) + abs(hw * math.cos(rel))
        if abs(proj.lateral_offset) - lat_ext > corridor:
            continue
        gap = ahead - long_ext - sim.ego_half_extents[0]
        if -long_ext < gap <= lookahead:
            best = min(best, gap)
    return best


def scripted_expert(world: WorldState, spec: ScenarioSpec | None = None, lookahead: float | None = None) -> np.ndarray:
    """Route-following waypoints (ego frame) that brake for obstacles already in the corridor ahead.

    The plan accelerates toward the scenario cruise speed and caps speed so
    the ego can stop ``STOP_BUFFER`` short of the nearest in-corridor agent
    within the lookahead window. Agents are treated as static at their
    current pose; nothing is predicted.
    """
    spec = spec or world.spec
    sim = world.sim
    ego = world.ego_pose
    v = world.ego_speed
    if lookahead is None:
        lookahead = max(15.0, 2.0 * v)
    proj = project_onto_polyline(ego.position, spec.route)
    stop_at = obstacle_gap(world, spec, lookahead) - STOP_BUFFER
    s_rel = np.empty(sim.horizon)
    s = 0.0
    for k in range(sim.horizon):
        cap = math.sqrt(2.0 * EXPERT_BRAKE * max(stop_at - s, 0.0)) if math.isfinite(stop_at) else math.inf
        v = max(min(v + EXPERT_ACCEL * sim.dt, spec.cruise_speed, sim.v_max, cap), 0.0)
        s = s + v * sim.dt
        if math.isfinite(stop_at):
            s = min(s, max(stop_at, 0.0))
        s_rel[k] = s
    centre = spec.route.point_at(proj.arclength + s_rel)
    heading = spec.route.heading_at(proj.arclength + s_rel)
    lateral = proj.lateral_offset * np.clip(1.0 - s_rel / LATERAL_BLEND, 0.0, 1.0)
    normal = np.stack([-np.sin(heading), np.cos(heading)], axis=1)
    pts = centre + lateral[:, None] * normal
    return to_frame(pts, ego)


def behavior_action(policy: BehaviorPolicySpec, world: WorldState, vocab: ActionVocabulary, rng: np.random.Generator) -> int:
    if policy.kind == PolicyKind.RANDOM:
        return int(rng.integers(vocab.K))
    traj = scripted_expert(world)
    if policy.sigma > 0:
        traj = traj + rng.normal(0.0, policy.sigma, size=traj.shape)
    return nearest_prototype(vocab, traj)[0]


def imitation_reward(behavior_traj, reference) -> float:
    a = np.asarray(behavior_traj, dtype=float)
    b = np.asarray(reference, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return -float(((a - b) ** 2).sum(axis=-1).mean())


def event_penalty(events, cfg: RewardConfig) -> float:
    ev = terminal_event(events)
    return {
        Event.COLLISION: cfg.c_collision,
        Event.OFF_ROAD: cfg.c_offroad,
        Event.OFF_ROUTE: cfg.c_offroute,
    }.get(ev, 0.0)


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action_index: int
    reward: float
    next_obs: np.ndarray
    done: int
    pseudo_expert_index: int
    episode_id: int
    step_index: int
    policy_tag: int


@dataclass(eq=False)
class OfflineDataset:
    """Column-oriented transition store."""

    obs: np.ndarray  # N x D
    actions: np.ndarray  # N, int64
    rewards: np.ndarray  # N
    next_obs: np.ndarray  # N x D
    dones: np.ndarray  # N, int64 in {0, 1}
    expert_actions: np.ndarray  # N, int64
    episode_ids: np.ndarray
    step_indices: np.ndarray
    policy_tags: np.ndarray
    vocab_hash: str
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.actions)
        for name in ("obs", "rewards", "next_obs", "dones", "expert_actions", "episode_ids", "step_indices", "policy_tags"):
            if len(getattr(self, name)) != n:
                raise LengthMismatch(f"column {name} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def obs_dim(self) -> int:
        return self.obs.shape[1]

    def transition(self, i: int) -> Transition:
        return Transition(
            self.obs[i],
            int(self.actions[i]),
            float(self.rewards[i]),
            self.next_obs[i],
            int(self.dones[i]),
            int(self.expert_actions[i]),
            int(self.episode_ids[i]),
            int(self.step_indices[i]),
            int(self.policy_tags[i]),
        )

    def check_vocab(self, vocab: ActionVocabulary) -> None:
        if vocab.hash != self.vocab_hash:
            raise HashMismatch(vocab.hash, self.vocab_hash, "dataset vocabulary")

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        cols = ("obs", "actions", "rewards", "next_obs", "dones", "expert_actions", "episode_ids", "step_indices", "policy_tags")
        return (
            self.vocab_hash == other.vocab_hash
            and self.manifest == other.manifest
            and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols)
        )

    @classmethod
    def from_transitions(cls, transitions, vocab_hash: str, manifest: dict | None = None) -> "OfflineDataset":
        ts = list(transitions)
        dim = len(ts[0].obs) if ts else 0
        return cls(
            obs=np.array([t.obs for t in ts], dtype=float).reshape(len(ts), dim),
            actions=np.array([t.action_index for t in ts], dtype=np.int64),
            rewards=np.array([t.reward for t in ts], dtype=float),
            next_obs=np.array([t.next_obs for t in ts], dtype=float).reshape(len(ts), dim),
            dones=np.array([t.done for t in ts], dtype=np.int64),
            expert_actions=np.array([t.pseudo_expert_index for t in ts], dtype=np.int64),
            episode_ids=np.array([t.episode_id for t in ts], dtype=np.int64),
            step_indices=np.array([t.step_index for t in ts], dtype=np.int64),
            policy_tags=np.array([t.policy_tag for t in ts], dtype=np.int64),
            vocab_hash=vocab_hash,
            manifest=manifest or {},
        )


def allocate_episodes(weights, n_episodes: int) -> list[int]:
    """Largest-remainder split of ``n_episodes`` by weight (ties to the earlier policy)."""
    w = np.asarray(weights, dtype=float)
    quota = w / w.sum() * n_episodes
    counts = np.floor(quota + 1e-9).astype(int)
    rest = n_episodes - counts.sum()
    order = sorted(range(len(w)), key=lambda i: (-(quota[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    return counts.tolist()


def rollout_episode(policy, spec: ScenarioSpec, vocab: ActionVocabulary, log: ExpertLog, cfg: RewardConfig, rng, episode_id: int = 0, policy_tag: int = 0, sim=None):
    """One behavior episode labeled with rewards and pseudo-expert actions.

    ``policy`` is a :class:`BehaviorPolicySpec` or any callable mapping a
    world state to an action index.
    """
    world = build_world(spec) if sim is None else build_world(spec, sim)
    out = []
    obs = observe(world).vector()
    while not world.done:
        a = policy(world) if callable(policy) else behavior_action(policy, world, vocab, rng)
        label = pseudo_expert_action(world.ego_pose, log, vocab)
        nxt, events = step(world, vocab.prototypes[a])
        r_im = imitation_reward(vocab.prototypes[a], vocab.prototypes[label.action_index])
        reward = cfg.w_imitation * r_im + cfg.w_event * event_penalty(events, cfg)
        next_obs = observe(nxt).vector()
        out.append(Transition(obs, a, reward, next_obs, int(nxt.done), label.action_index, episode_id, world.step_index, policy_tag))
        world, obs = nxt, next_obs
    return out, world.terminal_event


def collect(mixture, suite, vocab: ActionVocabulary, expert_logs, cfg: RewardConfig, n_episodes: int, seed: int, suite_seeds=None) -> OfflineDataset:
    """Roll out every policy of the mixture for its share of ``n_episodes``.

    Episodes of a policy cycle through the suite in order, so with equal
    weights every policy sees the same scenarios.
    """
    mixture = list(mixture)
    if not mixture or sum(p.weight for p in mixture) <= 0:
        raise EmptyMixture("mixture has no policy with positive weight")
    if abs(sum(p.weight for p in mixture) - 1.0) > 1e-9:
        raise ConfigError("mixture weights must sum to 1")
    if not suite:
        raise ConfigError("collection suite is empty")
    logs = expert_logs if isinstance(expert_logs, dict) else {lg.scenario_id: lg for lg in expert_logs}
    for spec in suite:
        log = logs.get(spec.scenario_id)
        if log is None:
            raise ConfigError(f"no expert log for scenario {spec.scenario_id}")
        if log.T != vocab.T:
            raise LengthMismatch(f"expert log horizon {log.T} != vocabulary T {vocab.T}")
    counts = allocate_episodes([p.weight for p in mixture], n_episodes)
    transitions = []
    episodes = []
    ep = 0
    for tag, (policy, count) in enumerate(zip(mixture, counts)):
        for j in range(count):
            spec = suite[j % len(suite)]
            rng = rng_for("collect", seed, tag, policy.tag, j)
            ts, ev = rollout_episode(policy, spec, vocab, logs[spec.scenario_id], cfg, rng, ep, tag)
            transitions += ts
            episodes.append([ep, tag, spec.scenario_id, len(ts), ev.value])
            ep += 1
    manifest = {
        "format": "odrl-dataset-manifest/1",
        "seed": seed,
        "suite_seeds": list(suite_seeds) if suite_seeds is not None else [],
        "scenario_ids": [s.scenario_id for s in suite],
        "mixture": [{"kind": p.kind.value, "sigma": p.sigma, "weight": p.weight, "tag": p.tag} for p in mixture],
        "episode_counts": counts,
        "n_episodes": n_episodes,
        "n_transitions": len(transitions),
        "reward": asdict(cfg),
        "vocab_hash": vocab.hash,
        "episodes": episodes,
    }
    return OfflineDataset.from_transitions(transitions, vocab.hash, manifest)


DATA_MAGIC = b"ODRL"
DATA_VERSION = 1
_REC_HEAD = struct.Struct("<qdqqqqq")  # action, reward, done, expert, episode, step, tag


def dataset_bytes(ds: OfflineDataset) -> bytes:
    buf = io.BytesIO()
    buf.write(DATA_MAGIC)
    buf.write(struct.pack("<I", DATA_VERSION))
    buf.write(bytes.fromhex(ds.vocab_hash))
    manifest = json.dumps(ds.manifest, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(manifest)))
    buf.write(manifest)
    dim = ds.obs.shape[1] if ds.obs.ndim == 2 else 0
    buf.write(struct.pack("<IQ", dim, len(ds)))
    for i in range(len(ds)):
        rec = _REC_HEAD.pack(
            int(ds.actions[i]),
            float(ds.rewards[i]),
            int(ds.dones[i]),
            int(ds.expert_actions[i]),
            int(ds.episode_ids[i]),
            int(ds.step_indices[i]),
            int(ds.policy_tags[i]),
        )
        rec += np.ascontiguousarray(ds.obs[i], dtype="<f8").tobytes()
        rec += np.ascontiguousarray(ds.next_obs[i], dtype="<f8").tobytes()
        buf.write(struct.pack("<I", len(rec)))
        buf.write(rec)
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def write_dataset(ds: OfflineDataset, path) -> None:
    Path(path).write_bytes(dataset_bytes(ds))


def read_dataset(path, expected_vocab_hash: str | None = None) -> OfflineDataset:
    data = Path(path).read_bytes()
    if len(data) < 4 + 4 + 32 + 4 + 12 + 32 or data[:4] != DATA_MAGIC:
        raise CorruptFile(f"{path}: not a dataset file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile(f"{path}: dataset checksum mismatch (truncated or modified)")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != DATA_VERSION:
        raise CorruptFile(f"{path}: unsupported dataset version {version}")
    vocab_hash = body[8:40].hex()
    if expected_vocab_hash is not None and expected_vocab_hash != vocab_hash:
        raise HashMismatch(expected_vocab_hash, vocab_hash, "dataset vocabulary")
    (mlen,) = struct.unpack_from("<I", body, 40)
    manifest = json.loads(body[44 : 44 + mlen])
    off = 44 + mlen
    dim, n = struct.unpack_from("<IQ", body, off)
    off += 12
    rec_len = _REC_HEAD.size + 16 * dim
    ints = np.empty((n, 6), dtype=np.int64)
    rewards = np.empty(n)
    obs = np.empty((n, dim))
    next_obs = np.empty((n, dim))
    for i in range(n):
        (length,) = struct.unpack_from("<I", body, off)
        if length != rec_len:
            raise CorruptFile(f"{path}: record {i} has length {length}, expected {rec_len}")
        off += 4
        a, r, d, e, ep, st, tag = _REC_HEAD.unpack_from(body, off)
        ints[i] = (a, d, e, ep, st, tag)
        rewards[i] = r
        o = off + _REC_HEAD.size
        obs[i] = np.frombuffer(body, dtype="<f8", count=dim, offset=o)
        next_obs[i] = np.frombuffer(body, dtype="<f8", count=dim, offset=o + 8 * dim)
        off += length
    if off != len(body):
        raise CorruptFile(f"{path}: trailing bytes after records")
    return OfflineDataset(
        obs=obs,
        actions=ints[:, 0].copy(),
        rewards=rewards,
        next_obs=next_obs,
        dones=ints[:, 1].copy(),
        expert_actions=ints[:, 2].copy(),
        episode_ids=ints[:, 3].copy(),
        step_indices=ints[:, 4].copy(),
        policy_tags=ints[:, 5].copy(),
        vocab_hash=vocab_hash,
        manifest=manifest,
    )


def export_jsonl(ds: OfflineDataset, path) -> None:
    """Line-delimited debug dump, one transition per line."""
    with open(path, "w") as fh:
        for i in range(len(ds)):
            t = ds.transition(i)
            rec = asdict(t)
            rec["obs"] = t.obs.tolist()
            rec["next_obs"] = t.next_obs.tolist()
            fh.write(json.dumps(rec) + "\n")
