import numpy as np
import pytest

from mfbprop import backprop
from mfbprop.backprop import RealNetParams, activation, gradient, init_weights, teacher_eta
from mfbprop.engine import LabeledSample
from mfbprop.topology import build
from mfbprop.verification import gradient_check


def test_activation_constants():
    assert activation(0.0) == 0.0
    assert activation(1.5) == pytest.approx(1.7159 * np.tanh(1.0), rel=1e-15)
    # the standard scaled tanh maps +-1 to about +-1
    assert activation(1.0) == pytest.approx(1.0, abs=1e-3)


def test_learning_rates():
    assert teacher_eta(3) == 0.1
    assert teacher_eta(5) == teacher_eta(7) == teacher_eta(9) == 3e-2
    assert teacher_eta(21) == teacher_eta(31) == teacher_eta(51) == 3e-3
    assert teacher_eta(101) == 1e-3
    assert backprop.MNIST_ETA == 1e-3
    with pytest.raises(ValueError):
        teacher_eta(11)


def test_init_distribution():
    t = build([12, 4000, 1])
    p = init_weights(t, 0)
    w = p.W[0]
    a = np.sqrt(3 / 12)
    assert np.abs(w).max() <= a
    assert np.sqrt(12 / 3) * w.std() == pytest.approx(1 / np.sqrt(3), rel=0.01)
    assert np.abs(p.W[1]).max() <= np.sqrt(3 / 4000)


def test_gradient_check_100_seeds():
    res = gradient_check(100)
    assert res.passed, res.line()


def test_gradient_deeper_net(rng):
    t = build([6, 6, 3, 1])
    p = RealNetParams(t, [rng.standard_normal(s) for s in t.shapes])
    x, y = rng.standard_normal(6), np.array([1.0])
    g = gradient(p, x, y)
    h = 1e-6
    for l, W in enumerate(p.W):
        idx = tuple(rng.integers(0, n) for n in W.shape)
        W[idx] += h
        up = backprop.loss(p, x, y)
        W[idx] -= 2 * h
        down = backprop.loss(p, x, y)
        W[idx] += h
        assert g[l][idx] == pytest.approx((up - down) / (2 * h), rel=1e-5, abs=1e-9)


def test_step_is_gradient_descent(rng):
    t = build([4, 4, 1])
    p = init_weights(t, 1, eta=0.05)
    s = LabeledSample(rng.standard_normal(4), [1.0])
    g = gradient(p, s.x, s.y)
    q = backprop.backprop_step(p, s)
    for a, b, gl in zip(q.W, p.W, g):
        np.testing.assert_allclose(a, b - 0.05 * gl, rtol=1e-15)


def test_train_step_returns_pre_update_output(rng):
    t = build([4, 2, 1])
    p = init_weights(t, 2)
    x = rng.standard_normal(4)
    u_before = backprop.rmnn_forward(p, x)[0][-1]
    u = backprop.train_step(p, x, np.array([-1.0]))
    np.testing.assert_array_equal(u, u_before)


def test_batched_matches_single(rng):
    t = build([5, 5, 1])
    ps = [init_weights(t, s) for s in range(3)]
    batch = RealNetParams.stack(ps)
    X = rng.standard_normal((3, 5))
    Y = rng.choice([-1.0, 1.0], (3, 1))
    gb = gradient(batch, X, Y)
    for b in range(3):
        for l, g in enumerate(gradient(ps[b], X[b], Y[b])):
            np.testing.assert_allclose(gb[l][b], g, rtol=1e-13)


def test_learns_simple_teacher():
    from mfbprop.teacher import make_teacher, sample_stream
    teacher = make_teacher(3, 0)
    X, Y = sample_stream(teacher, 3000, 1)
    p = init_weights(build([3, 3, 1]), 2, eta=0.1)
    for x, y in zip(X.astype(float), Y.astype(float)):
        backprop.train_step(p, x, y)
    Xt, Yt = sample_stream(teacher, 500, 2)
    pred = np.sign(backprop.rmnn_forward(p, Xt)[1][-1])
    assert np.mean(pred != Yt) < 0.05


def test_clipped_weights_sign():
    t = build([2, 1])
    p = RealNetParams(t, [np.array([[0.0, -0.3]])])
    assert backprop.clipped_weights(p)[0].tolist() == [[1, -1]]


def test_save_load(tmp_path):
    p = init_weights(build([6, 3, 1]), 4, eta=0.03)
    backprop.save(p, tmp_path / "b.json")
    q = backprop.load(tmp_path / "b.json")
    assert q.eta == 0.03
    assert all(np.array_equal(a, b) for a, b in zip(p.W, q.W))
