import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layer_oracles import LAYER_KINDS, layer_check, random_instance, softmax_ce_check
from tdse import nn
from tdse.errors import DegenerateBatch, EmptySequence, KernelTooLong, ShapeMismatch

# ------------------------------------------------------------------ forward


def test_conv_examples():
    assert nn.conv1d_forward([1, 2, 3], [1, 0]).tolist() == [1.0, 2.0]
    assert nn.conv1d_forward([-1, -2], [1]).tolist() == [0.0, 0.0]
    with pytest.raises(KernelTooLong):
        nn.conv1d_forward([1.0], [1.0, 2.0])


def test_conv_naive_oracle(rng):
    for _ in range(20):
        x, w = rng.standard_normal(8), rng.standard_normal(3)
        naive = []
        for j in range(8 - 3 + 1):
            s = 0.0
            for k in range(3):
                s += w[k] * x[j + k]
            naive.append(max(s, 0.0))
        assert np.allclose(nn.conv1d_forward(x, w), naive, rtol=0, atol=1e-12)


def test_conv_layer_matches_functional(rng):
    layer = nn.Conv1D(6, 3, 2, rng)
    x = rng.standard_normal((4, 6))
    out = layer.forward(x).reshape(4, 3, 5)
    for b in range(4):
        for f in range(3):
            assert np.allclose(out[b, f], nn.conv1d_forward(x[b], layer.params["w"][f]), atol=1e-14)


def test_batchnorm_examples():
    out = nn.batchnorm_forward(np.array([[1.0], [-1.0]]), 1.0, 0.0)
    assert np.allclose(out[:, 0], [1.0, -1.0], atol=1e-5)
    const = nn.batchnorm_forward(np.full((4, 2), 3.0), np.array([2.0, 5.0]), np.array([0.5, -1.0]))
    assert np.array_equal(const, np.tile([0.5, -1.0], (4, 1)))


def test_batchnorm_statistics(rng):
    for _ in range(20):
        # the statistics identity is exact up to eps / var, so keep var >> eps
        x = 10.0 * rng.standard_normal((4, 3))
        gamma, beta = rng.uniform(0.5, 2, 3), rng.standard_normal(3)
        out = nn.batchnorm_forward(x, gamma, beta)
        assert np.allclose(out.mean(axis=0), beta, atol=1e-6)
        assert np.allclose(out.std(axis=0), gamma, atol=1e-6)


def test_batchnorm_running_stats_and_infer(rng):
    x = rng.standard_normal((5, 2))
    state = nn.RunningStats(np.zeros(2), np.ones(2), 0.9)
    nn.batchnorm_forward(x, 1.0, 0.0, "train", state)
    assert np.allclose(state.mean, 0.1 * x.mean(axis=0))
    assert np.allclose(state.var, 0.9 + 0.1 * x.var(axis=0, ddof=1))
    out = nn.batchnorm_forward(x, 1.0, 0.0, "infer", state)
    assert np.allclose(out, (x - state.mean) / np.sqrt(state.var + 1e-5))
    with pytest.raises(DegenerateBatch):
        nn.batchnorm_forward(x[:1], 1.0, 0.0, "train")


def test_dense_examples(rng):
    x = np.abs(rng.standard_normal(4))
    assert np.allclose(nn.dense_forward(x, np.eye(4), np.zeros(4)), x)
    b = rng.standard_normal(3)
    assert np.allclose(nn.dense_forward(x, np.zeros((4, 3)), b), np.maximum(b, 0))
    W = rng.standard_normal((4, 3))
    naive = [max(sum(W[k, i] * x[k] for k in range(4)) + b[i], 0.0) for i in range(3)]
    assert np.allclose(nn.dense_forward(x, W, b), naive, atol=1e-14)
    assert np.allclose(nn.dense_forward(x, W, b, "identity"), x @ W + b)
    with pytest.raises(ShapeMismatch):
        nn.dense_forward(x, np.zeros((3, 3)), np.zeros(3))


def _rnn_params(rng, s=2, h1=3, h2=2, scale=1.0):
    return nn.RnnParams(scale * rng.standard_normal((s, h1)), scale * rng.standard_normal((h1, h1)),
                        scale * rng.standard_normal(h1), scale * rng.standard_normal((h1, h2)),
                        scale * rng.standard_normal((h2, h2)), scale * rng.standard_normal(h2))


def test_rnn_examples(rng):
    zero = _rnn_params(rng, scale=0.0)
    assert np.array_equal(nn.rnn_forward([rng.standard_normal(2)] * 3, zero), np.zeros(2))
    p = _rnn_params(rng)
    x = rng.standard_normal(2)
    one = np.tanh(np.tanh(x @ p.U + p.b1) @ p.V + p.b2)
    assert np.allclose(nn.rnn_forward([x], p), one, atol=1e-15)
    with pytest.raises(EmptySequence):
        nn.rnn_forward([], p)


def test_rnn_hand_unroll(rng):
    p = _rnn_params(rng)
    xs = rng.standard_normal((3, 2))
    h1 = np.zeros(3)
    h2 = np.zeros(2)
    for t in range(3):
        a1 = [sum(xs[t, k] * p.U[k, j] for k in range(2)) + sum(h1[k] * p.W1[k, j] for k in range(3)) + p.b1[j]
              for j in range(3)]
        h1 = np.tanh(np.array(a1))
        a2 = [sum(h1[k] * p.V[k, j] for k in range(3)) + sum(h2[k] * p.W2[k, j] for k in range(2)) + p.b2[j]
              for j in range(2)]
        h2 = np.tanh(np.array(a2))
    assert np.allclose(nn.rnn_forward(list(xs), p), h2, rtol=0, atol=1e-12)
    layer = nn.RNN2(2, 3, 2, rng)
    layer.params.update(U=p.U, W1=p.W1, b1=p.b1, V=p.V, W2=p.W2, b2=p.b2)
    assert np.allclose(layer.forward(xs[None])[0], h2, atol=1e-12)


def test_softmax_examples(rng):
    assert nn.softmax_head([0.0, 0.0]).tolist() == [0.5, 0.5]
    big = nn.softmax_head([1000.0, 0.0])
    assert np.isfinite(big).all() and big[0] == pytest.approx(1.0) and big[1] < 1e-300
    for _ in range(20):
        z = rng.uniform(-5, 5, 4)
        direct = np.exp(z) / np.exp(z).sum()
        assert np.allclose(nn.softmax_head(z), direct, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8))
def test_softmax_simplex(z):
    p = nn.softmax_head(z)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


# ---------------------------------------------------------------- backward


@pytest.mark.parametrize("kind", LAYER_KINDS)
def test_layer_gradients(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for _ in range(10):
        layer, x = random_instance(kind, rng)
        assert layer_check(layer, x, rng) < 1e-4


def test_softmax_ce_gradient(rng):
    for _ in range(10):
        assert softmax_ce_check(rng) < 1e-4


def test_mbcnn_gradient_check(rng):
    net = nn.MultiBranchNet([3, 4, 5], filters=2, kernel_len=2, dense_width=4, seed=1)
    xs = [rng.standard_normal((6, w)) for w in (3, 4, 5)]
    y = np.array([0, 1, 0, 1, 1, 0])
    errs = nn.check_gradients(net, xs, y)
    assert max(errs.values()) < 1e-4, errs
    assert set(errs) >= {"conv0.w", "bn2.gamma", "dense.W", "out.b", "input1"}


def test_rnn_four_step_gradient_check(rng):
    net = nn.RecurrentNet(3, 4, 3, seed=2)
    x = rng.standard_normal((5, 4, 3))
    errs = nn.check_gradients(net, x, np.array([0, 1, 1, 0, 1]), l2=1e-3)
    assert max(errs.values()) < 1e-4, errs


def test_zero_gradient_at_constructed_minimum():
    net = nn.MLP(3, [4, 4], seed=0)
    net.zero_()
    x = np.random.default_rng(0).standard_normal((4, 3))
    net.loss_and_grad(x, np.array([0, 1, 0, 1]))
    assert all(np.all(g == 0) for g in net.gradients().values())


# -------------------------------------------------------------------- Adam


def test_adam_zero_gradient():
    p = {"w": np.array([1.0, -2.0])}
    nn.adam_step(p, {"w": np.zeros(2)}, nn.AdamState())
    assert p["w"].tolist() == [1.0, -2.0]


def test_adam_constant_gradient_step_size():
    p = {"w": np.zeros(2)}
    st_ = nn.AdamState(lr=1e-3)
    for _ in range(3000):
        before = p["w"].copy()
        nn.adam_step(p, {"w": np.array([0.3, -7.0])}, st_)
    assert np.allclose(p["w"] - before, [-1e-3, 1e-3], rtol=1e-6)


def test_adam_quadratic_converges():
    a = np.array([1.0, 4.0])
    p = {"w": np.array([1.5, -2.0])}
    st_ = nn.AdamState(lr=0.05)
    for _ in range(500):
        nn.adam_step(p, {"w": 2 * a * p["w"]}, st_)
    assert float(np.sum(a * p["w"] ** 2)) < 1e-6


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        nn.adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nn.AdamState())


# ---------------------------------------------------------------- training


def test_batch_slices_merge_singleton_tail():
    sizes = [len(b) for b in nn.batch_slices(65, 32, None)]
    assert sizes == [32, 33]
    assert [len(b) for b in nn.batch_slices(66, 32, None)] == [32, 32, 2]
    idx = np.concatenate(nn.batch_slices(65, 32, np.random.default_rng(0)))
    assert sorted(idx.tolist()) == list(range(65))


def test_training_deterministic_and_learns(rng):
    x = rng.standard_normal((80, 4))
    y = (x[:, 0] + x[:, 1] > 0).astype(int)

    def run():
        net = nn.MultiBranchNet([2, 2], filters=2, kernel_len=1, dense_width=8, seed=3)
        hist = nn.train_model(net, [x[:, :2], x[:, 2:]], y, epochs=40, lr=1e-2, seed=5)
        return net, hist

    a, ha = run()
    b, hb = run()
    assert ha == hb
    assert all(np.array_equal(a.state_dict()[k], b.state_dict()[k]) for k in a.state_dict())
    assert ha[-1] < ha[0]
    acc = np.mean(a.predict_proba([x[:, :2], x[:, 2:]]).argmax(axis=1) == y)
    assert acc > 0.85


def test_checkpoint_round_trip(tmp_path, rng):
    net = nn.MultiBranchNet([3, 3], seed=4)
    nn.train_model(net, [rng.standard_normal((10, 3))] * 2, rng.integers(0, 2, 10), epochs=2)
    nn.save_checkpoint(tmp_path / "c.json", net.state_dict(), {"k": 1})
    state, meta = nn.load_checkpoint(tmp_path / "c.json")
    assert meta == {"k": 1}
    other = nn.MultiBranchNet([3, 3], seed=99)
    other.load_state_dict(state)
    for k, v in net.state_dict().items():
        assert np.array_equal(other.state_dict()[k], v)
    x = [rng.standard_normal((4, 3))] * 2
    assert np.array_equal(net.predict_proba(x), other.predict_proba(x))
    (tmp_path / "bad.json").write_text('{"format": "x", "version": 1}', encoding="utf-8")
    with pytest.raises(ValueError):
        nn.load_checkpoint(tmp_path / "bad.json")
