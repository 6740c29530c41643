import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from odrl.errors import CorruptFile, ShapeMismatch
from odrl.neural import (
    ADAM_EPS,
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
    read_checkpoint,
    softmax,
    write_checkpoint,
)


def reference_forward(params, x):
    h = np.atleast_2d(x)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < len(params.weights) - 1:
            h = np.where(h > 0, h, 0.0)
    if params.basis is not None:
        h = h @ params.basis.T + params.basis_bias
    return h


def numeric_grad(f, params, h=1e-5):
    flat = params.flat()
    out = np.empty_like(flat)
    for i in range(flat.size):
        e = flat.copy()
        e[i] += h
        up = f(params.from_flat(e))
        e[i] -= 2 * h
        out[i] = (up - f(params.from_flat(e))) / (2 * h)
    return out


def test_zero_network_outputs_zero():
    p = init_mlp([3, 4, 2], np.random.default_rng(0)).zeros_like()
    assert np.all(forward(p, np.ones(3))[0] == 0.0)


def test_identity_linear_layer():
    p = MlpParams([np.eye(3)], [np.zeros(3)])
    x = np.array([1.5, -2.0, 0.25])
    assert np.array_equal(forward(p, x)[0], x)


@pytest.mark.parametrize("basis", [False, True])
def test_forward_matches_reference(basis):
    rng = np.random.default_rng(1)
    B = rng.normal(size=(7, 5)) if basis else None
    p = init_mlp([6, 9, 8, 5 if basis else 7], rng, basis=B, out_scale=1.0)
    if basis:
        p.basis_bias[:] = rng.normal(size=7)
    x = rng.normal(size=(4, 6))
    assert np.allclose(forward(p, x)[0], reference_forward(p, x), atol=1e-12, rtol=0)


def test_linear_gradient_is_outer_product():
    rng = np.random.default_rng(2)
    p = MlpParams([rng.normal(size=(3, 2))], [np.zeros(2)])
    x = rng.normal(size=3)
    _, tape = forward(p, x)
    g = backward(p, tape, np.ones(2))
    assert np.allclose(g.weights[0], np.outer(x, np.ones(2)))
    assert np.allclose(g.biases[0], 1.0)


def test_zero_output_gradient_gives_zero_grads():
    rng = np.random.default_rng(3)
    p = init_mlp([4, 5, 3], rng)
    _, tape = forward(p, rng.normal(size=(2, 4)))
    assert all(np.all(a == 0) for a in backward(p, tape, np.zeros((2, 3))).arrays())


@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("basis", [False, True])
def test_backward_matches_finite_differences(seed, basis):
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(6, 4)) if basis else None
    p = init_mlp([5, 7, 6, 4 if basis else 6], rng, basis=B, out_scale=1.0)
    x = rng.normal(size=(3, 5))
    G = rng.normal(size=(3, 6))
    _, tape = forward(p, x)
    analytic = backward(p, tape, G).flat()
    numeric = numeric_grad(lambda q: float((forward(q, x)[0] * G).sum()), p)
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    assert rel.max() < 1e-6


def test_input_gradient():
    rng = np.random.default_rng(5)
    p = init_mlp([3, 6, 2], rng, out_scale=1.0)
    x = rng.normal(size=3)
    G = np.array([1.0, -2.0])
    _, tape = forward(p, x)
    _, gx = backward(p, tape, G, return_input_grad=True)
    h = 1e-6
    num = [(forward(p, x + h * e)[0] @ G - forward(p, x - h * e)[0] @ G) / (2 * h) for e in np.eye(3)]
    assert np.allclose(gx, num, atol=1e-7)


def test_shape_errors():
    p = init_mlp([3, 2], np.random.default_rng(0))
    with pytest.raises(ShapeMismatch):
        forward(p, np.ones(4))
    _, tape = forward(p, np.ones(3))
    with pytest.raises(ShapeMismatch):
        backward(p, tape, np.ones(3))
    with pytest.raises(ShapeMismatch):
        MlpParams([np.ones((2, 3))], [np.ones(2)])


def test_softmax_examples():
    assert np.allclose(softmax(np.zeros(5)), 0.2)
    assert np.allclose(softmax([0.0, math.log(2.0)]), [1 / 3, 2 / 3], atol=1e-15)
    z = np.array([0.3, -1.2, 2.0])
    assert np.max(np.abs(softmax(z + 1000.0) - softmax(z))) < 1e-12
    assert np.allclose(np.exp(log_softmax(z)), softmax(z))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40))
def test_softmax_is_distribution(logits):
    p = softmax(logits)
    assert np.all(p >= 0) and abs(p.sum() - 1.0) < 1e-12


def scalar_adamw(p, g, lr, wd, steps):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        p = p * (1 - lr * wd)
        p = p - lr * (m / (1 - 0.9**t)) / (math.sqrt(v / (1 - 0.999**t)) + ADAM_EPS)
        out.append(p)
    return out


def scalar_params(x):
    return MlpParams([np.array([[x]])], [np.array([0.0])])


def test_adamw_matches_scalar_reference():
    p = scalar_params(0.7)
    state = OptimizerState.for_params(p, weight_decay=0.01)
    grad = MlpParams([np.array([[0.3]])], [np.array([0.0])])
    ref = scalar_adamw(0.7, 0.3, 1e-2, 0.01, 100)
    for t in range(100):
        p, state = optimizer_step(p, grad, state, 1e-2)
        assert abs(p.weights[0][0, 0] - ref[t]) < 1e-12
    assert state.step == 100


def test_adamw_zero_grad_zero_decay_is_identity():
    p = init_mlp([3, 4, 2], np.random.default_rng(0))
    state = OptimizerState.for_params(p, weight_decay=0.0)
    q, _ = optimizer_step(p, p.zeros_like(), state, 1e-3)
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))


def test_adamw_pure_decay():
    p = scalar_params(2.0)
    state = OptimizerState.for_params(p, weight_decay=0.5)
    for _ in range(5):
        p, state = optimizer_step(p, p.zeros_like(), state, 0.1)
    assert p.weights[0][0, 0] == pytest.approx(2.0 * 0.95**5, abs=1e-14)


def test_cosine_lr():
    assert cosine_lr(0, 100, 3e-5) == 3e-5
    assert cosine_lr(100, 100, 3e-5) == pytest.approx(0.0, abs=1e-20)
    assert cosine_lr(50, 100, 3e-5) == pytest.approx(1.5e-5)


def test_ema_examples():
    rng = np.random.default_rng(0)
    a = init_mlp([3, 4, 2], rng)
    b = init_mlp([3, 4, 2], rng)
    same = ema_update(TargetParams(a.copy(), 0.3), a)
    assert all(np.allclose(x, y, rtol=1e-15, atol=0) for x, y in zip(same.params.arrays(), a.arrays()))
    full = ema_update(TargetParams(a.copy(), 1.0), b)
    assert all(np.array_equal(x, y) for x, y in zip(full.params.arrays(), b.arrays()))


@pytest.mark.parametrize("tau", [1e-4, 0.01, 0.5])
def test_ema_geometric_decay(tau):
    target = TargetParams(scalar_params(1.0), tau)
    online = scalar_params(0.0)
    for _ in range(200):
        target = ema_update(target, online)
    assert target.params.weights[0][0, 0] == pytest.approx((1 - tau) ** 200, rel=1e-12)
    with pytest.raises(ValueError):
        TargetParams(online, 0.0)


def make_checkpoint():
    rng = np.random.default_rng(9)
    actor = init_mlp([4, 6, 5], rng)
    critic = init_mlp([4, 6, 3], rng, basis=rng.normal(size=(5, 3)))
    return NetworkCheckpoint(
        actor,
        critic,
        TargetParams(actor.copy(), 0.01),
        TargetParams(critic.copy(), 0.01),
        OptimizerState.for_params(actor),
        OptimizerState.for_params(critic),
        step=7,
        vocab_hash="ab" * 32,
        meta={"obs_mean": [0.0] * 4},
    )


def test_checkpoint_round_trip(tmp_path):
    ck = make_checkpoint()
    path = tmp_path / "c.odck"
    write_checkpoint(ck, path)
    back = read_checkpoint(path)
    assert back.step == 7 and back.vocab_hash == ck.vocab_hash and back.meta == ck.meta
    assert np.array_equal(back.critic.flat(), ck.critic.flat())
    assert np.array_equal(back.critic.basis, ck.critic.basis)
    assert back.critic_target.tau == 0.01


def test_checkpoint_corruption_detected(tmp_path):
    path = tmp_path / "c.odck"
    write_checkpoint(make_checkpoint(), path)
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptFile):
        read_checkpoint(path)
    path.write_bytes(b"nope")
    with pytest.raises(CorruptFile):
        read_checkpoint(path)
