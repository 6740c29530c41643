"""Offline actor-critic with a pseudo-expert behavior-cloning regularizer.

The critic regresses one-step TD targets built from EMA target networks.
The actor minimizes the advantage-weighted surrogate

    L = -mean_b sum_k sg(pi_bk) sg(A_bk) log pi_bk  +  alpha * mean_b -log pi_b,aE

whose logit gradient is ``-pi_j A_j / B`` for the RL part (because the
advantages are zero-mean under pi) and ``alpha (pi - onehot(aE)) / B`` for
the BC part.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from .datasets import OfflineDataset
from .errors import ConfigError, IndexOutOfRange, LengthMismatch, MissingLabel, NonFiniteLoss
from .neural import (
    MlpParams,
    NetworkCheckpoint,
    OptimizerState,
    TargetParams,
    backward,
    cosine_lr,
    ema_update,
    forward,
    init_mlp,
    log_softmax,
    optimizer_step,
    softmax,
)
from .seeding import derive_seed
from .vocabulary import ActionVocabulary


class TargetMode(str, Enum):
    SAMPLED = "Sampled"
    EXPECTED = "Expected"


class RlMode(str, Enum):
    EXACT = "ExactExpectation"
    SAMPLED = "Sampled"


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    alpha: float = 0.1
    batch_size: int = 8
    total_iters: int = 20000
    base_lr: float = 3e-5
    weight_decay: float = 0.01
    tau: float = 1e-4
    seed: int = 0
    target_value_mode: TargetMode = TargetMode.SAMPLED
    rl_objective_mode: RlMode = RlMode.EXACT
    rl_term: bool = True  # False gives the pure pseudo-expert BC baseline
    hidden: tuple[int, ...] = (128, 128)
    head: str = "dense"  # or "factored": outputs share a fixed prototype feature basis
    bc_pretrain_iters: int = 0
    bc_pretrain_lr: float = 1e-3
    critic_warmup_iters: int = 0
    checkpoint_every: int = 0
    critic_init: str = "zero"  # or "return-quantile": output bias starts at a low quantile of the data's returns-to-go
    critic_init_quantile: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "target_value_mode", TargetMode(self.target_value_mode))
        object.__setattr__(self, "rl_objective_mode", RlMode(self.rl_objective_mode))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_iters < 0 or self.bc_pretrain_iters < 0 or self.critic_warmup_iters < 0:
            raise ConfigError("iteration counts must be >= 0")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.head not in ("dense", "factored"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.critic_init not in ("zero", "return-quantile"):
            raise ConfigError(f"unknown critic_init {self.critic_init!r}")
        if not 0.0 <= self.critic_init_quantile <= 1.0:
            raise ConfigError("critic_init_quantile must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["target_value_mode"] = self.target_value_mode.value
        d["rl_objective_mode"] = self.rl_objective_mode.value
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    expert_actions: np.ndarray | None = None

    @classmethod
    def from_dataset(cls, ds: OfflineDataset, idx, mean=None, std=None) -> "Batch":
        obs, nxt = ds.obs[idx], ds.next_obs[idx]
        if mean is not None:
            obs = (obs - mean) / std
            nxt = (nxt - mean) / std
        return cls(obs, ds.actions[idx], ds.rewards[idx], nxt, ds.dones[idx], ds.expert_actions[idx])

    def __len__(self) -> int:
        return len(self.actions)


def advantage(q_values, probs) -> np.ndarray:
    q = np.asarray(q_values, dtype=float)
    p = np.asarray(probs, dtype=float)
    if q.shape != p.shape:
        raise LengthMismatch(f"q {q.shape} and probs {p.shape} differ")
    return q - (p * q).sum(axis=-1, keepdims=True)


def _check_indices(idx, K: int, what: str):
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise IndexOutOfRange(f"{what} index outside [0, {K})")


def td_targets(batch: Batch, actor_target: MlpParams, critic_target: MlpParams, cfg: TrainConfig, rng=None) -> np.ndarray:
    q_next, _ = forward(critic_target, batch.next_obs)
    pi_next = softmax(forward(actor_target, batch.next_obs)[0])
    if cfg.target_value_mode == TargetMode.EXPECTED:
        v_next = (pi_next * q_next).sum(1)
    else:
        if rng is None:
            raise ValueError("Sampled target mode needs an rng")
        u = rng.random(len(batch))
        cdf = np.cumsum(pi_next, axis=1)
        a_next = np.minimum((cdf < u[:, None] * cdf[:, -1:]).sum(1), q_next.shape[1] - 1)
        v_next = q_next[np.arange(len(batch)), a_next]
    return batch.rewards + cfg.gamma * (1.0 - batch.dones) * v_next


def critic_loss(batch: Batch, actor: MlpParams, critic: MlpParams, actor_target: MlpParams, critic_target: MlpParams, cfg: TrainConfig, rng=None):
    """Mean squared TD error and its gradient with respect to the critic only.

    ``actor`` is unused by the loss (targets come from the EMA copies); it is
    accepted for a uniform call signature.
    """
    if not len(batch):
        raise LengthMismatch("empty batch")
    _check_indices(batch.actions, critic.out_dim, "action")
    y = td_targets(batch, actor_target, critic_target, cfg, rng)
    q, tape = forward(critic, batch.obs)
    rows = np.arange(len(batch))
    err = q[rows, batch.actions] - y
    loss = float(np.mean(err**2))
    g = np.zeros_like(q)
    g[rows, batch.actions] = 2.0 * err / len(batch)
    return loss, backward(critic, tape, g)


@dataclass(frozen=True)
class ActorLossParts:
    total: float
    rl: float
    bc: float
    adv_abs_mean: float


def actor_surrogate(actor: MlpParams, obs, coef, expert_actions, alpha: float):
    """Surrogate ``-mean_b sum_k coef_bk log pi_bk + alpha mean_b -log pi_b,aE`` with coef held constant."""
    logits, tape = forward(actor, obs)
    logp = log_softmax(logits)
    pi = np.exp(logp)
    B = len(logits)
    rows = np.arange(B)
    rl = -float((coef * logp).sum()) / B
    g = -(coef - pi * coef.sum(1, keepdims=True)) / B
    bc = 0.0
    if alpha != 0.0:
        bc = -alpha * float(logp[rows, expert_actions].sum()) / B
        onehot = np.zeros_like(pi)
        onehot[rows, expert_actions] = 1.0
        g = g + alpha * (pi - onehot) / B
    return rl, bc, backward(actor, tape, g)


def actor_coefficients(batch: Batch, actor: MlpParams, critic: MlpParams, cfg: TrainConfig, rng=None, q=None):
    """Stop-gradient weights of the RL surrogate and the advantages they were built from."""
    pi = softmax(forward(actor, batch.obs)[0])
    if q is None:
        q = forward(critic, batch.obs)[0]
    adv = advantage(q, pi)
    if not cfg.rl_term:
        return np.zeros_like(pi), np.zeros_like(adv)
    if cfg.rl_objective_mode == RlMode.EXACT:
        return pi * adv, adv
    if rng is None:
        raise ValueError("Sampled RL mode needs an rng")
    u = rng.random(len(pi))
    cdf = np.cumsum(pi, axis=1)
    a = np.minimum((cdf < u[:, None] * cdf[:, -1:]).sum(1), pi.shape[1] - 1)
    coef = np.zeros_like(pi)
    coef[np.arange(len(pi)), a] = adv[np.arange(len(pi)), a]
    return coef, adv


def actor_loss(batch: Batch, actor: MlpParams, critic: MlpParams, cfg: TrainConfig, rng=None, q=None):
    """Returns ``(ActorLossParts, gradients)`` for the regularized actor objective."""
    if not len(batch):
        raise LengthMismatch("empty batch")
    if batch.expert_actions is None:
        raise MissingLabel("batch has no pseudo-expert labels")
    _check_indices(batch.expert_actions, actor.out_dim, "pseudo-expert")
    coef, adv = actor_coefficients(batch, actor, critic, cfg, rng, q)
    rl, bc, grads = actor_surrogate(actor, batch.obs, coef, batch.expert_actions, cfg.alpha)
    return ActorLossParts(rl + bc, rl, bc, float(np.abs(adv).mean())), grads


def action_features(vocab: ActionVocabulary, n_fourier: int = 64, seed: int = 0) -> np.ndarray:
    """Fixed K x F prototype features: standardized waypoints plus random Fourier features."""
    x = vocab.flat
    z = (x - x.mean(0)) / (x.std(0) + 1e-9)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1.0 / math.sqrt(z.shape[1]), size=(z.shape[1], n_fourier)) * 2.0
    b = rng.uniform(0.0, 2.0 * math.pi, n_fourier)
    rff = math.sqrt(2.0 / n_fourier) * np.cos(z @ w + b)
    return np.concatenate([z / math.sqrt(z.shape[1]), rff], axis=1)


def _fresh_net(in_dim: int, vocab: ActionVocabulary, cfg: TrainConfig, rng) -> MlpParams:
    if cfg.head == "factored":
        basis = action_features(vocab, seed=cfg.seed)
        return init_mlp([in_dim, *cfg.hidden, basis.shape[1]], rng, basis=basis)
    return init_mlp([in_dim, *cfg.hidden, vocab.K], rng)


def returns_to_go(ds: OfflineDataset, gamma: float) -> np.ndarray:
    """Discounted Monte-Carlo return of every transition within its episode."""
    g = np.zeros(len(ds))
    nxt = 0.0
    for i in range(len(ds) - 1, -1, -1):
        if i + 1 < len(ds) and ds.episode_ids[i + 1] != ds.episode_ids[i]:
            nxt = 0.0
        nxt = ds.rewards[i] + gamma * (1.0 - ds.dones[i]) * nxt
        g[i] = nxt
    return g


def init_checkpoint(obs_dim: int, vocab: ActionVocabulary, cfg: TrainConfig, obs_mean=None, obs_std=None, q_init: float = 0.0) -> NetworkCheckpoint:
    """Fresh networks; every critic output starts at ``q_init``."""
    rng = np.random.default_rng(derive_seed("init", cfg.seed))
    actor = _fresh_net(obs_dim, vocab, cfg, rng)
    critic = _fresh_net(obs_dim, vocab, cfg, rng)
    if critic.basis is not None:
        critic.basis_bias[:] = q_init
    else:
        critic.biases[-1][:] = q_init
    mean = np.zeros(obs_dim) if obs_mean is None else np.asarray(obs_mean, dtype=float)
    std = np.ones(obs_dim) if obs_std is None else np.asarray(obs_std, dtype=float)
    return NetworkCheckpoint(
        actor=actor,
        critic=critic,
        actor_target=TargetParams(actor.copy(), cfg.tau),
        critic_target=TargetParams(critic.copy(), cfg.tau),
        actor_opt=OptimizerState.for_params(actor, cfg.base_lr, cfg.weight_decay),
        critic_opt=OptimizerState.for_params(critic, cfg.base_lr, cfg.weight_decay),
        step=0,
        vocab_hash=vocab.hash,
        meta={"obs_mean": mean.tolist(), "obs_std": std.tolist(), "train": cfg.to_dict()},
    )


def obs_stats(ds: OfflineDataset) -> tuple[np.ndarray, np.ndarray]:
    mean = ds.obs.mean(0)
    std = ds.obs.std(0)
    return mean, np.where(std > 1e-6, std, 1.0)


def normalizer(ckpt: NetworkCheckpoint) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(ckpt.meta["obs_mean"]), np.asarray(ckpt.meta["obs_std"])


LOG_FIELDS = ("iteration", "phase", "critic_loss", "actor_rl", "actor_bc", "adv_abs_mean", "lr", "critic_grad_norm", "actor_grad_norm")


@dataclass
class TrainingLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, **row):
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
            w.writeheader()
            for r in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def _grad_norm(g: MlpParams) -> float:
    return float(math.sqrt(sum(float((a * a).sum()) for a in g.arrays())))


class TrainingAborted(NonFiniteLoss):
    def __init__(self, message: str, checkpoint: NetworkCheckpoint, log: TrainingLog):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.log = log


def train(dataset: OfflineDataset, vocab: ActionVocabulary, cfg: TrainConfig, init: NetworkCheckpoint | None = None, on_checkpoint=None):
    """Run optional BC pretraining, critic warm-up and the main actor-critic phase.

    Returns ``(checkpoint, TrainingLog)``. On a non-finite loss raises
    :class:`TrainingAborted` carrying the last good checkpoint.
    """
    dataset.check_vocab(vocab)
    if init is not None and init.vocab_hash != vocab.hash:
        from .errors import HashMismatch

        raise HashMismatch(vocab.hash, init.vocab_hash, "checkpoint vocabulary")
    log = TrainingLog()
    if init is None:
        if not len(dataset):
            raise LengthMismatch("cannot train on an empty dataset")
        mean, std = obs_stats(dataset)
        # actions the data never shows keep roughly their initial value, so a
        # pessimistic start stops them from looking better than observed ones
        q0 = 0.0
        if cfg.critic_init == "return-quantile":
            q0 = float(np.quantile(returns_to_go(dataset, cfg.gamma), cfg.critic_init_quantile))
        ckpt = init_checkpoint(dataset.obs_dim, vocab, cfg, mean, std, q0)
    else:
        ckpt = init.copy()
    if cfg.total_iters == 0 and cfg.bc_pretrain_iters == 0 and cfg.critic_warmup_iters == 0:
        return ckpt, log
    mean, std = normalizer(ckpt)
    rng = np.random.default_rng(derive_seed("train", cfg.seed))
    N = len(dataset)
    state = {"ckpt": ckpt}

    def guard(values, it):
        if not all(math.isfinite(v) for v in values):
            raise TrainingAborted(f"non-finite loss at iteration {it}", state["ckpt"], log)

    # behavior-cloning pretrain of the actor on pseudo-expert labels
    if cfg.bc_pretrain_iters:
        opt = OptimizerState.for_params(ckpt.actor, cfg.bc_pretrain_lr, cfg.weight_decay)
        actor = ckpt.actor
        bc_cfg = TrainConfig(**{**cfg.to_dict(), "alpha": 1.0, "rl_term": False})
        for it in range(cfg.bc_pretrain_iters):
            batch = Batch.from_dataset(dataset, rng.integers(N, size=cfg.batch_size), mean, std)
            zeros = np.zeros((len(batch), actor.out_dim))
            parts, g = actor_loss(batch, actor, ckpt.critic, bc_cfg, q=zeros)
            guard([parts.total], it)
            lr = cosine_lr(it, cfg.bc_pretrain_iters, cfg.bc_pretrain_lr)
            actor, opt = optimizer_step(actor, g, opt, lr)
            log.append(iteration=it, phase="bc", critic_loss=0.0, actor_rl=0.0, actor_bc=parts.bc, adv_abs_mean=0.0, lr=lr, critic_grad_norm=0.0, actor_grad_norm=_grad_norm(g))
        ckpt.actor = actor
        ckpt.actor_target = TargetParams(actor.copy(), cfg.tau)
        state["ckpt"] = ckpt.copy()

    def critic_update(batch, it, total, phase_lr_step):
        c_loss, cg = critic_loss(batch, ckpt.actor, ckpt.critic, ckpt.actor_target.params, ckpt.critic_target.params, cfg, rng)
        guard([c_loss], it)
        lr = cosine_lr(phase_lr_step, total, cfg.base_lr)
        ckpt.critic, ckpt.critic_opt = optimizer_step(ckpt.critic, cg, ckpt.critic_opt, lr)
        return c_loss, cg, lr

    for it in range(cfg.critic_warmup_iters):
        batch = Batch.from_dataset(dataset, rng.integers(N, size=cfg.batch_size), mean, std)
        c_loss, cg, lr = critic_update(batch, it, cfg.critic_warmup_iters, it)
        ckpt.critic_target = ema_update(ckpt.critic_target, ckpt.critic)
        log.append(iteration=it, phase="warmup", critic_loss=c_loss, actor_rl=0.0, actor_bc=0.0, adv_abs_mean=0.0, lr=lr, critic_grad_norm=_grad_norm(cg), actor_grad_norm=0.0)

    for it in range(cfg.total_iters):
        batch = Batch.from_dataset(dataset, rng.integers(N, size=cfg.batch_size), mean, std)
        q_now = forward(ckpt.critic, batch.obs)[0]
        c_loss, cg, lr = critic_update(batch, it, cfg.total_iters, it)
        parts, ag = actor_loss(batch, ckpt.actor, ckpt.critic, cfg, rng, q=q_now)
        guard([parts.total], it)
        ckpt.actor, ckpt.actor_opt = optimizer_step(ckpt.actor, ag, ckpt.actor_opt, lr)
        ckpt.actor_target = ema_update(ckpt.actor_target, ckpt.actor)
        ckpt.critic_target = ema_update(ckpt.critic_target, ckpt.critic)
        ckpt.step += 1
        log.append(
            iteration=it,
            phase="main",
            critic_loss=c_loss,
            actor_rl=parts.rl,
            actor_bc=parts.bc,
            adv_abs_mean=parts.adv_abs_mean,
            lr=lr,
            critic_grad_norm=_grad_norm(cg),
            actor_grad_norm=_grad_norm(ag),
        )
        if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            state["ckpt"] = ckpt.copy()
            if on_checkpoint is not None:
                on_checkpoint(state["ckpt"])
    ckpt.meta = {**ckpt.meta, "train": cfg.to_dict()}
    return ckpt, log
