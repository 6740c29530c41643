"""Small MLPs with exact reverse-mode gradients, AdamW, cosine schedule and EMA targets.

Everything is float64. A network maps a batch of row vectors through
affine layers with ReLU between them. Optionally the last affine layer
emits F features which a fixed K x F ``basis`` projects onto the K outputs
(plus a trainable per-output bias), so that outputs for similar actions
share parameters.
"""

from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptFile, ShapeMismatch

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # layer i: (in_i, out_i)
    biases: list[np.ndarray]
    basis: np.ndarray | None = None  # fixed (K, F), not trained
    basis_bias: np.ndarray | None = None  # (K,), trained

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: bias {b.shape} vs weight {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {i}: input width {w.shape[0]} != {self.weights[i - 1].shape[1]}")
        if self.basis is not None:
            if self.basis.shape[1] != self.weights[-1].shape[1]:
                raise ShapeMismatch("basis width must match the last layer")
            if self.basis_bias is None or self.basis_bias.shape != (self.basis.shape[0],):
                raise ShapeMismatch("basis needs a per-output bias")

    @property
    def widths(self) -> list[int]:
        w = [self.weights[0].shape[0]] + [x.shape[1] for x in self.weights]
        if self.basis is not None:
            w.append(self.basis.shape[0])
        return w

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order (the basis itself is excluded)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        if self.basis is not None:
            out.append(self.basis_bias)
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        arrays = list(arrays)
        n = len(self.weights)
        bb = arrays[2 * n] if self.basis is not None else None
        return MlpParams(arrays[0 : 2 * n : 2], arrays[1 : 2 * n : 2], self.basis, bb)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "MlpParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vec: np.ndarray) -> "MlpParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i : i + a.size], dtype=float).reshape(a.shape).copy())
            i += a.size
        return self.with_arrays(out)


def init_mlp(widths, rng: np.random.Generator, basis: np.ndarray | None = None, out_scale: float = 1e-2) -> MlpParams:
    """He-uniform hidden layers; the output layer is shrunk by ``out_scale``."""
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        if i == len(widths) - 2:
            w *= out_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
    bb = None if basis is None else np.zeros(basis.shape[0])
    return MlpParams(weights, biases, None if basis is None else np.asarray(basis, dtype=float), bb)


@dataclass
class Tape:
    inputs: list[np.ndarray]  # input to each affine layer
    pre: list[np.ndarray]  # pre-activation of each hidden layer
    features: np.ndarray | None = None  # last affine output when a basis is used
    squeeze: bool = False


def forward(params: MlpParams, x) -> tuple[np.ndarray, Tape]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = x[None] if squeeze else x
    if h.shape[1] != params.in_dim:
        raise ShapeMismatch(f"input width {h.shape[1]} != {params.in_dim}")
    inputs, pre = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    tape = Tape(inputs, pre, squeeze=squeeze)
    if params.basis is not None:
        tape.features = h
        h = h @ params.basis.T + params.basis_bias
    return (h[0] if squeeze else h), tape


def backward(params: MlpParams, tape: Tape, output_gradient, return_input_grad: bool = False):
    """Gradients of ``sum(output * output_gradient)`` with respect to every trainable array."""
    g = np.asarray(output_gradient, dtype=float)
    if tape.squeeze:
        g = g[None]
    expect = (tape.inputs[0].shape[0], params.out_dim)
    if g.shape != expect:
        raise ShapeMismatch(f"output gradient {g.shape} != {expect}")
    bb_grad = None
    if params.basis is not None:
        bb_grad = g.sum(0)
        g = g @ params.basis
    dws, dbs = [None] * len(params.weights), [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        dws[i] = tape.inputs[i].T @ g
        dbs[i] = g.sum(0)
        if i > 0 or return_input_grad:
            g = g @ params.weights[i].T
            if i > 0:
                g = g * (tape.pre[i - 1] > 0.0)
    grads = MlpParams(dws, dbs, params.basis, bb_grad)
    if return_input_grad:
        return grads, (g[0] if tape.squeeze else g)
    return grads


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    base_lr: float = 3e-5
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params: MlpParams, base_lr: float = 3e-5, weight_decay: float = 0.01) -> "OptimizerState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, base_lr, weight_decay)

    def copy(self) -> "OptimizerState":
        return OptimizerState([a.copy() for a in self.m], [a.copy() for a in self.v], self.step, self.base_lr, self.weight_decay)


def optimizer_step(params: MlpParams, grads: MlpParams, state: OptimizerState, lr: float) -> tuple[MlpParams, OptimizerState]:
    """AdamW: decoupled decay ``p *= 1 - lr*wd`` then a bias-corrected Adam step."""
    p_arrays, g_arrays = params.arrays(), grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ShapeMismatch("gradient shapes do not match parameters")
    if len(state.m) != len(p_arrays) or any(p.shape != m.shape for p, m in zip(p_arrays, state.m)):
        raise ShapeMismatch("optimizer moments do not match parameters")
    t = state.step + 1
    c1 = 1.0 - BETA1**t
    c2 = 1.0 - BETA2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * (g * g)
        p = p * (1.0 - lr * state.weight_decay)
        p = p - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        new_p.append(p)
        new_m.append(m)
        new_v.append(v)
    return params.with_arrays(new_p), OptimizerState(new_m, new_v, t, state.base_lr, state.weight_decay)


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if total_steps <= 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class TargetParams:
    params: MlpParams
    tau: float = 1e-4

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")


def ema_update(target: TargetParams, online: MlpParams) -> TargetParams:
    t_arrays, o_arrays = target.params.arrays(), online.arrays()
    if len(t_arrays) != len(o_arrays) or any(a.shape != b.shape for a, b in zip(t_arrays, o_arrays)):
        raise ShapeMismatch("target and online parameter shapes differ")
    tau = target.tau
    new = [(1.0 - tau) * t + tau * o for t, o in zip(t_arrays, o_arrays)]
    return TargetParams(target.params.with_arrays(new), tau)


@dataclass
class NetworkCheckpoint:
    actor: MlpParams
    critic: MlpParams
    actor_target: TargetParams
    critic_target: TargetParams
    actor_opt: OptimizerState
    critic_opt: OptimizerState
    step: int = 0
    vocab_hash: str = ""
    meta: dict = field(default_factory=dict)

    def copy(self) -> "NetworkCheckpoint":
        return NetworkCheckpoint(
            self.actor.copy(),
            self.critic.copy(),
            TargetParams(self.actor_target.params.copy(), self.actor_target.tau),
            TargetParams(self.critic_target.params.copy(), self.critic_target.tau),
            self.actor_opt.copy(),
            self.critic_opt.copy(),
            self.step,
            self.vocab_hash,
            json.loads(json.dumps(self.meta)),
        )


CKPT_MAGIC = b"ODCK"
CKPT_VERSION = 1


def _net_arrays(prefix: str, params: MlpParams) -> dict:
    out = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.w{i}"] = w
        out[f"{prefix}.b{i}"] = b
    if params.basis is not None:
        out[f"{prefix}.basis"] = params.basis
        out[f"{prefix}.basis_bias"] = params.basis_bias
    return out


def _net_from(prefix: str, arrays: dict) -> MlpParams:
    n = sum(1 for k in arrays if k.startswith(prefix + ".w"))
    ws = [arrays[f"{prefix}.w{i}"] for i in range(n)]
    bs = [arrays[f"{prefix}.b{i}"] for i in range(n)]
    return MlpParams(ws, bs, arrays.get(f"{prefix}.basis"), arrays.get(f"{prefix}.basis_bias"))


def _opt_arrays(prefix: str, opt: OptimizerState) -> dict:
    out = {}
    for i, (m, v) in enumerate(zip(opt.m, opt.v)):
        out[f"{prefix}.m{i}"] = m
        out[f"{prefix}.v{i}"] = v
    return out


def write_checkpoint(ckpt: NetworkCheckpoint, path) -> None:
    """Versioned binary: magic, version, JSON header, raw little-endian float64 arrays, sha256."""
    arrays = {}
    arrays.update(_net_arrays("actor", ckpt.actor))
    arrays.update(_net_arrays("critic", ckpt.critic))
    arrays.update(_net_arrays("actor_target", ckpt.actor_target.params))
    arrays.update(_net_arrays("critic_target", ckpt.critic_target.params))
    arrays.update(_opt_arrays("actor_opt", ckpt.actor_opt))
    arrays.update(_opt_arrays("critic_opt", ckpt.critic_opt))
    header = {
        "arrays": [[name, list(a.shape)] for name, a in arrays.items()],
        "step": ckpt.step,
        "vocab_hash": ckpt.vocab_hash,
        "tau": [ckpt.actor_target.tau, ckpt.critic_target.tau],
        "opt": [[o.step, o.base_lr, o.weight_decay] for o in (ckpt.actor_opt, ckpt.critic_opt)],
        "meta": ckpt.meta,
    }
    buf = io.BytesIO()
    hdr = json.dumps(header, sort_keys=True).encode()
    buf.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(hdr)) + hdr)
    for a in arrays.values():
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def read_checkpoint(path) -> NetworkCheckpoint:
    data = Path(path).read_bytes()
    if len(data) < 44 or data[:4] != CKPT_MAGIC:
        raise CorruptFile(f"{path}: bad checkpoint magic")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile(f"{path}: checkpoint checksum mismatch")
    version, hlen = struct.unpack("<II", body[4:12])
    if version != CKPT_VERSION:
        raise CorruptFile(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(body[12 : 12 + hlen])
    off = 12 + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
        off += 8 * n
    nets = {p: _net_from(p, arrays) for p in ("actor", "critic", "actor_target", "critic_target")}
    opts = []
    for prefix, (step, lr, wd) in zip(("actor_opt", "critic_opt"), header["opt"]):
        n = sum(1 for k in arrays if k.startswith(prefix + ".m"))
        opts.append(OptimizerState([arrays[f"{prefix}.m{i}"] for i in range(n)], [arrays[f"{prefix}.v{i}"] for i in range(n)], step, lr, wd))
    tau_a, tau_c = header["tau"]
    return NetworkCheckpoint(
        nets["actor"],
        nets["critic"],
        TargetParams(nets["actor_target"], tau_a),
        TargetParams(nets["critic_target"], tau_c),
        opts[0],
        opts[1],
        header["step"],
        header["vocab_hash"],
        header["meta"],
    )
