"""Pipeline configuration and stage functions shared by the CLI, sweeps and tests.

Every stochastic stage draws its seed from ``derive_seed(master_seed, stage)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .datasets import (
    BehaviorPolicySpec,
    OfflineDataset,
    RewardConfig,
    behavior_action,
    collect,
    mixture_to_text,
    parse_mixture,
)
from .errors import ConfigError
from .evaluation import AblationAxis, MetricsReport, evaluate, evaluate_policy
from .geometry import Pose2D
from .neural import NetworkCheckpoint
from .pseudo_expert import ExpertLog, build_expert_log, interpolate_reference
from .scenarios import generate_suite
from .seeding import derive_seed
from .simulator import ScenarioSpec, Suite
from .training import TrainConfig, TrainingLog, train
from .vocabulary import ActionVocabulary, kmeans_fit, synthetic_maneuvers


@dataclass(frozen=True)
class SuiteSizes:
    eval_general: int = 137
    eval_safety: int = 20
    train_general: int = 60
    train_safety: int = 60


@dataclass(frozen=True)
class VocabConfig:
    K: int = 256
    max_iters: int = 100
    n_recovery: int = 12000
    recovery_lateral_std: float = 1.0
    recovery_heading_std: float = 0.08
    synthetic_fraction: float = 0.5


@dataclass(frozen=True)
class CollectConfig:
    mixture: str = "noisy-0.2:1,noisy-0.4:1"
    n_episodes: int = 600


@dataclass(frozen=True)
class PathsConfig:
    """Artifact locations, relative to the output directory unless absolute."""

    suites: str = "suites"
    vocab: str = "vocab.json"
    dataset: str = "dataset.odrl"
    checkpoint: str = "checkpoint.odck"
    reports: str = "reports"


def desk_train_config() -> TrainConfig:
    """Training defaults for the small-network, CPU-scale pipeline.

    Optimizer constants stay at their published values; the schedule adds a
    short behavior-cloning warm start and a critic-only warm-up, uses the
    expected (lower variance) target, and starts unseen actions pessimistic.
    """
    return TrainConfig(
        total_iters=30000,
        bc_pretrain_iters=5000,
        critic_warmup_iters=10000,
        target_value_mode="Expected",
        critic_init="return-quantile",
        critic_init_quantile=0.25,
    )


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    suites: SuiteSizes = field(default_factory=SuiteSizes)
    vocab: VocabConfig = field(default_factory=VocabConfig)
    collect: CollectConfig = field(default_factory=CollectConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=desk_train_config)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "paths": asdict(self.paths),
            "suites": asdict(self.suites),
            "vocab": asdict(self.vocab),
            "collect": asdict(self.collect),
            "reward": asdict(self.reward),
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        sections = {"paths": PathsConfig, "suites": SuiteSizes, "vocab": VocabConfig, "collect": CollectConfig, "reward": RewardConfig}
        unknown = set(d) - {"seed", "train", *sections}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        try:
            if "seed" in d:
                kw["seed"] = int(d["seed"])
            for name, klass in sections.items():
                if name in d:
                    allowed = {f.name for f in fields(klass)}
                    if not isinstance(d[name], dict):
                        raise ConfigError(f"config section {name} must be an object")
                    bad = set(d[name]) - allowed
                    if bad:
                        raise ConfigError(f"unknown fields in {name}: {sorted(bad)}")
                    kw[name] = klass(**d[name])
            if "train" in d:
                if not isinstance(d["train"], dict):
                    raise ConfigError("config section train must be an object")
                kw["train"] = TrainConfig.from_dict({**desk_train_config().to_dict(), **d["train"]})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        s = self.suites
        if min(s.eval_general, s.eval_safety, s.train_general, s.train_safety) < 1:
            raise ConfigError("suite sizes must be >= 1")
        if self.vocab.K < 2:
            raise ConfigError("vocabulary K must be >= 2")
        if self.collect.n_episodes < 1:
            raise ConfigError("n_episodes must be >= 1")
        parse_mixture(self.collect.mixture)

    def with_overrides(self, alpha=None, w_imitation=None, c_event=None, mixture=None, seed=None) -> "PipelineConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=int(seed), train=replace(cfg.train, seed=int(seed)))
        if alpha is not None:
            cfg = replace(cfg, train=replace(cfg.train, alpha=float(alpha)))
        if w_imitation is not None:
            cfg = replace(cfg, reward=replace(cfg.reward, w_imitation=float(w_imitation)))
        if c_event is not None:
            c = float(c_event)
            cfg = replace(cfg, reward=replace(cfg.reward, c_collision=c, c_offroad=c, c_offroute=c))
        if mixture is not None:
            parse_mixture(mixture)
            cfg = replace(cfg, collect=replace(cfg.collect, mixture=mixture))
        cfg.validate()
        return cfg


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except ValueError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return PipelineConfig.from_dict(doc)


def stage_seed(cfg: PipelineConfig, stage: str) -> int:
    return derive_seed(cfg.seed, stage)


SUITE_NAMES = ("train_general", "train_safety", "eval_general", "eval_safety")


def make_suites(cfg: PipelineConfig) -> dict[str, tuple[list[ScenarioSpec], int]]:
    """All four suites with their seeds; training and evaluation seeds never coincide."""
    out = {}
    for name in SUITE_NAMES:
        kind = Suite.GENERAL if name.endswith("general") else Suite.SAFETY
        seed = stage_seed(cfg, f"suite-{name}")
        out[name] = (generate_suite(kind, getattr(cfg.suites, name), seed), seed)
    return out


def expert_logs(specs) -> dict[str, ExpertLog]:
    return {s.scenario_id: build_expert_log(s) for s in specs}


def vocabulary_corpus(logs, vcfg: VocabConfig, seed: int, T: int = 6) -> np.ndarray:
    """Expert futures, expert references seen from perturbed poses, and synthetic maneuvers."""
    logs = list(logs)
    futures = np.concatenate([lg.futures for lg in logs])
    rng = np.random.default_rng(seed)
    rec = np.empty((vcfg.n_recovery, T, 2))
    for j in range(vcfg.n_recovery):
        lg = logs[rng.integers(len(logs))]
        i = rng.integers(len(lg.poses) - 1)
        x, y, h = lg.poses[i]
        d = rng.normal(0.0, vcfg.recovery_lateral_std)
        dh = rng.normal(0.0, vcfg.recovery_heading_std)
        rec[j] = interpolate_reference(Pose2D(x - np.sin(h) * d, y + np.cos(h) * d, h + dh), lg)
    syn = synthetic_maneuvers(int(vcfg.synthetic_fraction * len(futures)), T=T, seed=derive_seed(seed, "synthetic"))
    return np.concatenate([futures, rec, syn])


def build_vocab(cfg: PipelineConfig, train_specs) -> ActionVocabulary:
    """Vocabulary from the training suites only (evaluation scenarios are never seen)."""
    seed = stage_seed(cfg, "vocab")
    logs = [build_expert_log(s) for s in train_specs]
    corpus = vocabulary_corpus(logs, cfg.vocab, seed)
    return kmeans_fit(corpus, cfg.vocab.K, max_iters=cfg.vocab.max_iters, seed=seed)


def collect_dataset(cfg: PipelineConfig, vocab: ActionVocabulary, suites, mixture=None, reward=None) -> OfflineDataset:
    train_specs = suites["train_general"][0] + suites["train_safety"][0]
    mix = parse_mixture(mixture or cfg.collect.mixture)
    return collect(
        mix,
        train_specs,
        vocab,
        expert_logs(train_specs),
        reward or cfg.reward,
        cfg.collect.n_episodes,
        stage_seed(cfg, "collect"),
        suite_seeds=[suites["train_general"][1], suites["train_safety"][1]],
    )


def train_model(cfg: PipelineConfig, dataset: OfflineDataset, vocab: ActionVocabulary, train_cfg: TrainConfig | None = None, init=None) -> tuple[NetworkCheckpoint, TrainingLog]:
    return train(dataset, vocab, train_cfg or cfg.train, init)


def evaluate_model(ckpt: NetworkCheckpoint, suites, vocab: ActionVocabulary, label: str = "") -> MetricsReport:
    return evaluate(ckpt, suites["eval_general"][0], suites["eval_safety"][0], vocab, label)


def evaluate_behavior(policy: BehaviorPolicySpec, suites, vocab: ActionVocabulary, seed: int) -> MetricsReport:
    """Closed-loop metrics of a stochastic behavior policy with per-scenario seeded noise."""

    def factory(spec):
        rng = np.random.default_rng(derive_seed("behavior-eval", seed, policy.tag, spec.scenario_id))
        return lambda world: behavior_action(policy, world, vocab, rng)

    return evaluate_policy(factory, suites["eval_general"][0], suites["eval_safety"][0], vocab, policy.tag)


class PipelineCache:
    """In-memory reuse of suites, vocabulary and datasets across sweep points."""

    def __init__(self):
        self.store = {}

    def get(self, key, build):
        if key not in self.store:
            self.store[key] = build()
        return self.store[key]


_CACHE = PipelineCache()


def run_point(base: PipelineConfig, axis, value, workdir=None, cache: PipelineCache | None = None) -> MetricsReport:
    """Train and evaluate one ablation grid point; upstream stages are shared through the cache."""
    cache = cache or _CACHE
    axis = AblationAxis(axis)
    cfg = base
    if axis == AblationAxis.ALPHA:
        cfg = base.with_overrides(alpha=value)
    elif axis == AblationAxis.REWARD_WEIGHTS:
        w_im, w_ev = value
        cfg = replace(base, reward=replace(base.reward, w_imitation=float(w_im), w_event=float(w_ev)))
    else:
        cfg = base.with_overrides(mixture=value)
    up = json.dumps({"seed": cfg.seed, "suites": asdict(cfg.suites), "vocab": asdict(cfg.vocab)}, sort_keys=True)
    suites = cache.get(("suites", up), lambda: make_suites(cfg))
    vocab = cache.get(("vocab", up), lambda: build_vocab(cfg, suites["train_general"][0] + suites["train_safety"][0]))
    dkey = ("data", up, cfg.collect.mixture, cfg.collect.n_episodes, json.dumps(asdict(cfg.reward), sort_keys=True))
    dataset = cache.get(dkey, lambda: collect_dataset(cfg, vocab, suites))
    ckpt, _ = train_model(cfg, dataset, vocab)
    label = f"{axis.value}={value}"
    if workdir is not None:
        from .neural import write_checkpoint

        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in str(value))
        write_checkpoint(ckpt, Path(workdir) / f"ckpt_{axis.value}_{safe}.odck")
    return evaluate_model(ckpt, suites, vocab, label)


__all__ = [
    "PipelineConfig",
    "PathsConfig",
    "SuiteSizes",
    "VocabConfig",
    "CollectConfig",
    "load_config",
    "make_suites",
    "build_vocab",
    "collect_dataset",
    "train_model",
    "evaluate_model",
    "evaluate_behavior",
    "run_point",
    "mixture_to_text",
]
