"""Discrete trajectory action space built by k-means over expert trajectories."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFile, LengthMismatch, TooFewSamples
from .seeding import digest_arrays


@dataclass(frozen=True, eq=False)
class ActionVocabulary:
    prototypes: np.ndarray  # K x T x 2, ego frame
    source_hash: str
    seed: int = 0
    inertia_history: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        protos = np.array(self.prototypes, dtype=float)
        if protos.ndim != 3 or protos.shape[2] != 2:
            raise ValueError("prototypes must be K x T x 2")
        if not np.all(np.isfinite(protos)):
            raise ValueError("prototypes must be finite")
        flat = protos.reshape(len(protos), -1)
        if len(np.unique(flat, axis=0)) != len(flat):
            raise ValueError("vocabulary prototypes must be distinct")
        protos.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)

    @property
    def K(self) -> int:
        return self.prototypes.shape[0]

    @property
    def T(self) -> int:
        return self.prototypes.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return self.prototypes.reshape(self.K, -1)

    @property
    def hash(self) -> str:
        """Identity of this exact vocabulary (prototypes plus provenance)."""
        h = hashlib.sha256(digest_arrays(self.prototypes).encode())
        h.update(self.source_hash.encode())
        return h.hexdigest()

    def __eq__(self, other):
        return (
            isinstance(other, ActionVocabulary)
            and np.array_equal(self.prototypes, other.prototypes)
            and self.source_hash == other.source_hash
            and self.seed == other.seed
        )


def _as_flat(trajectories) -> np.ndarray:
    try:
        trajs = np.asarray(trajectories, dtype=float)
    except ValueError as exc:
        raise LengthMismatch("trajectories must share a common T") from exc
    if trajs.ndim != 3 or trajs.shape[2] != 2:
        raise LengthMismatch("trajectories must share a common T (array N x T x 2)")
    return trajs.reshape(len(trajs), -1)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = ((x - centers[0]) ** 2).sum(1)
    for j in range(1, k):
        total = d2.sum()
        idx = int(rng.choice(len(x), p=d2 / total)) if total > 0 else int(rng.integers(len(x)))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(1))
    return centers


def _assign(x: np.ndarray, centers: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    labels = np.empty(len(x), dtype=np.int64)
    for lo in range(0, len(x), chunk):
        labels[lo : lo + chunk] = np.argmin(_sq_dists(x[lo : lo + chunk], centers), axis=1)
    d2 = ((x - centers[labels]) ** 2).sum(1)
    return labels, d2


def lloyd(x: np.ndarray, k: int, max_iters: int = 100, seed: int = 0, tol: float = 1e-6):
    """Plain Lloyd iterations from k-means++ seeds.

    Returns ``(centers, labels, inertia_history)``. Empty clusters are
    re-seeded with the point farthest from its current centroid.
    """
    rng = np.random.default_rng(seed)
    centers = kmeans_pp_init(x, k, rng)
    labels, d2 = _assign(x, centers)
    history = [float(d2.sum())]
    for _ in range(max_iters):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
        for j in np.flatnonzero(~filled):
            far = int(np.argmax(d2))
            centers[j] = x[far]
            d2[far] = 0.0
        new_labels, d2 = _assign(x, centers)
        inertia = float(d2.sum())
        prev = history[-1]
        history.append(inertia)
        assert inertia <= prev * (1 + 1e-9) + 1e-12, "k-means inertia increased"
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable or prev - inertia <= tol * prev:
            break
    return centers, labels, history


def kmeans_fit(trajectories, K: int, max_iters: int = 100, seed: int = 0) -> ActionVocabulary:
    x = _as_flat(trajectories)
    T = x.shape[1] // 2
    if len(np.unique(x, axis=0)) < K:
        raise TooFewSamples(f"need at least {K} distinct trajectories, got {len(np.unique(x, axis=0))}")
    centers, _, history = lloyd(x, K, max_iters=max_iters, seed=seed)
    return ActionVocabulary(centers.reshape(K, T, 2), digest_arrays(x), seed, tuple(history))


def nearest_prototype(vocab: ActionVocabulary, query) -> tuple[int, float]:
    """Index and Euclidean distance of the closest prototype (lowest index on ties)."""
    q = np.asarray(query, dtype=float)
    if q.shape != vocab.prototypes.shape[1:]:
        raise LengthMismatch(f"query shape {q.shape} does not match vocabulary T={vocab.T}")
    d2 = ((vocab.flat - q.ravel()) ** 2).sum(1)
    i = int(np.argmin(d2))
    return i, float(np.sqrt(d2[i]))


def nearest_prototypes(vocab: ActionVocabulary, queries) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(queries, dtype=float)
    if q.shape[1:] != vocab.prototypes.shape[1:]:
        raise LengthMismatch(f"query shape {q.shape[1:]} does not match vocabulary T={vocab.T}")
    flat = q.reshape(len(q), -1)
    d2 = ((flat[:, None, :] - vocab.flat[None]) ** 2).sum(2)
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(q)), idx])


def synthetic_maneuvers(n: int, T: int = 6, dt: float = 0.5, v_max: float = 15.0, seed: int = 0) -> np.ndarray:
    """Kinematically plausible ego-frame trajectories covering stops, speed changes, turns and lane shifts."""
    rng = np.random.default_rng(seed)
    k = np.arange(1, T + 1)
    v0 = rng.uniform(0.0, v_max, n)
    accel = np.where(rng.random(n) < 0.3, 0.0, rng.uniform(-6.0, 3.0, n))
    stop = rng.random(n) < 0.08
    v0 = np.where(stop, 0.0, v0)
    accel = np.where(stop, 0.0, accel)
    speeds = np.clip(v0[:, None] + accel[:, None] * k * dt, 0.0, v_max)
    kind = rng.random(n)
    kappa = np.where(kind < 0.35, rng.uniform(-0.12, 0.12, n), 0.0)
    shift = np.where(kind > 0.65, rng.uniform(-4.0, 4.0, n), 0.0)
    ds = speeds * dt
    heading = np.cumsum(kappa[:, None] * ds, axis=1) - kappa[:, None] * ds / 2
    x = np.cumsum(ds * np.cos(heading), axis=1)
    y = np.cumsum(ds * np.sin(heading), axis=1)
    # lane shifts scale with progress so a stopped car does not slide sideways
    travel = np.maximum(x[:, -1:], 1e-9)
    y = y + shift[:, None] * 0.5 * (1 - np.cos(np.pi * np.clip(x / np.maximum(travel, 10.0), 0, 1)))
    return np.stack([x, y], axis=2)


def write_vocabulary(vocab: ActionVocabulary, path) -> None:
    doc = {
        "format": "odrl-vocab/1",
        "K": vocab.K,
        "T": vocab.T,
        "seed": vocab.seed,
        "source_hash": vocab.source_hash,
        "prototypes": vocab.prototypes.ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def read_vocabulary(path) -> ActionVocabulary:
    try:
        doc = json.loads(Path(path).read_text())
        protos = np.array(doc["prototypes"], dtype=float).reshape(doc["K"], doc["T"], 2)
    except (ValueError, KeyError) as exc:
        raise CorruptFile(f"{path}: not a vocabulary file ({exc})") from exc
    return ActionVocabulary(protos, doc["source_hash"], int(doc["seed"]))
