"""Forward/backward pass values, update contract and invariants.

Frozen numbers below were produced by plain ``math``-module evaluation of the
three forward formulas and the output-layer G, independent of the package.
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfbprop import engine, oracle, posterior
from mfbprop.engine import EPS, DimensionError, LabeledSample, backward_pass, forward_pass, update_step
from mfbprop.posterior import PosteriorParams
from mfbprop.topology import build
from mfbprop.training import MFBLearner

# L=1, K=2, x=[1,-1], h=[1,-1]
MU_A = 1.077056784376733
SIGMA2_A = 0.4199743416140263
NU_A = 0.9034843114487928
# L=1, K=2, x=[1,0.5], h=[0,0], y=+1
G_B = 1.4272992929222168
R11_B = 0.8911118066464521
R12_B = 0.6129603310176102


def one_layer(h):
    return PosteriorParams(build([len(h), 1]), [np.array([h], dtype=float)])


def test_forward_example_a():
    tr = forward_pass(one_layer([1.0, -1.0]), [1.0, -1.0])
    assert tr.mu[0][0] == pytest.approx(MU_A, abs=1e-14)
    assert tr.sigma2[0][0] == pytest.approx(SIGMA2_A, abs=1e-14)
    assert tr.nu[1][0] == pytest.approx(NU_A, abs=1e-14)


def test_forward_example_b():
    tr = forward_pass(one_layer([0.0, 0.0]), [1.0, 0.5])
    assert tr.mu[0][0] == 0.0
    assert tr.sigma2[0][0] == pytest.approx(0.625 + EPS, abs=1e-15)
    assert tr.nu[1][0] == 0.0


def test_backward_example_b():
    p = one_layer([0.0, 0.0])
    s = LabeledSample([1.0, 0.5], [1.0])
    bwd = backward_pass(p, forward_pass(p, s.x), s)
    np.testing.assert_allclose(bwd.G[0][0], [G_B, G_B], rtol=1e-13)
    np.testing.assert_allclose(bwd.R[0][0], [R11_B, R12_B], rtol=1e-13)


def test_zero_params_give_zero_means():
    p = posterior.zeros(build([6, 3, 1]))
    tr = forward_pass(p, np.random.default_rng(0).standard_normal(6))
    assert all(np.all(m == 0) for m in tr.mu)
    assert all(np.all(v == 0) for v in tr.nu[1:])


def test_dimension_errors():
    p = posterior.zeros(build([3, 1]))
    with pytest.raises(DimensionError):
        forward_pass(p, np.ones(4))
    with pytest.raises(ValueError):
        LabeledSample([1.0, 2.0], [0.5])


def test_mismatched_trace_rejected():
    p = posterior.zeros(build([3, 1]))
    tr = forward_pass(p, np.ones(3))
    with pytest.raises(ValueError):
        backward_pass(p, tr, LabeledSample(-np.ones(3), [1.0]))


def test_zero_init_fixed_point():
    t = build([5, 5, 1])
    p = posterior.zeros(t)
    new, _, bwd = update_step(p, LabeledSample(np.ones(5), [-1.0]))
    assert all(np.all(R == 0) for R in bwd.R)
    assert all(np.array_equal(a, b) for a, b in zip(new.h, p.h))


def test_certain_consistent_sample_leaves_posterior_fixed():
    W = np.array([[1.0, -1.0, 1.0]])
    p = PosteriorParams(build([3, 1]), [30.0 * W])
    x = np.array([0.9, -0.8, 0.7])  # every excluded sum agrees with y = +1
    new, _, bwd = update_step(p, LabeledSample(x, [1.0]))
    assert np.max(np.abs(bwd.R[0])) < 1e-8
    assert np.max(np.abs(new.h[0] - p.h[0])) < 1e-8


@pytest.mark.parametrize("y", [1.0, -1.0])
def test_guard_uses_stated_asymptotic_form(y):
    W = np.full((1, 3), -y)
    p = PosteriorParams(build([3, 1]), [30.0 * W])
    x = np.ones(3)
    fwd = forward_pass(p, x)
    bwd = backward_pass(p, fwd, LabeledSample(x, [y]))
    # Phi(y mu_ex / sigma) underflows to 0, so the substitute takes over
    assert np.all(np.isfinite(bwd.G[0]))
    mu_ex = bwd.mu_excl[0]
    expected = -2 * mu_ex / (fwd.sigma2[0][:, None] * math.sqrt(3))
    np.testing.assert_allclose(bwd.G[0], expected, rtol=1e-12)
    np.testing.assert_allclose(bwd.R[0], y * np.tanh(expected * x), rtol=1e-12)


def test_guard_direction_for_positive_label():
    # y = +1 against a confident all-minus posterior: every weight moves toward +1
    p = PosteriorParams(build([3, 1]), [np.full((1, 3), -30.0)])
    new, _, bwd = update_step(p, LabeledSample(np.ones(3), [1.0]))
    assert np.all(bwd.R[0] > 0)


def test_update_is_half_R_exactly(rng):
    t = build([8, 4, 2])
    p = posterior.init_prior(t, 0)
    s = LabeledSample(rng.standard_normal(8), [1.0, -1.0])
    new, _, bwd = update_step(p, s)
    for a, b, R in zip(new.h, p.h, bwd.R):
        assert np.array_equal(a, b + 0.5 * R)


def test_update_uses_pre_update_params(rng):
    """Both passes read frozen params: layer-2 R must not see the new layer-1 h."""
    t = build([6, 3, 1])
    p = posterior.init_prior(t, 1)
    s = LabeledSample(rng.standard_normal(6), [1.0])
    fwd = forward_pass(p, s.x)
    bwd = backward_pass(p, fwd, s)
    _, _, bwd2 = update_step(p, s)
    for a, b in zip(bwd.R, bwd2.R):
        assert np.array_equal(a, b)


def test_inplace_update(rng):
    p = posterior.init_prior(build([4, 2, 1]), 2)
    ref = update_step(p, LabeledSample(np.ones(4), [1.0]))[0]
    same, _, _ = update_step(p, LabeledSample(np.ones(4), [1.0]), inplace=True)
    assert same is p
    assert all(np.array_equal(a, b) for a, b in zip(ref.h, p.h))


ARCHS = [[5, 1], [6, 3, 1], [8, 4, 2], [12, 6, 3, 1]]


@st.composite
def instances(draw):
    arch = draw(st.sampled_from(ARCHS))
    seed = draw(st.integers(0, 2**32 - 1))
    scale = draw(st.sampled_from([0.5, 2.0, 10.0]))
    rng = np.random.default_rng(seed)
    t = build(arch)
    p = PosteriorParams(t, [rng.uniform(-scale, scale, s) for s in t.shapes])
    s = LabeledSample(rng.standard_normal(t.input_dim), rng.choice([-1.0, 1.0], t.output_dim))
    return p, s


@settings(max_examples=60, deadline=None)
@given(instances())
def test_forward_consistency(inst):
    p, s = inst
    tr = forward_pass(p, s.x)
    for mu, s2, nu in zip(tr.mu, tr.sigma2, tr.nu[1:]):
        assert np.all(s2 > 0)
        assert np.all(np.abs(nu) <= 1)
        z = mu / np.sqrt(s2)
        ref = np.array([math.erf(v / math.sqrt(2)) for v in z.ravel()]).reshape(z.shape)
        np.testing.assert_allclose(nu, ref, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(instances())
def test_backward_finite(inst):
    p, s = inst
    bwd = backward_pass(p, forward_pass(p, s.x), s)
    for arr in bwd.G + bwd.R + bwd.Delta:
        assert np.all(np.isfinite(arr))
    assert np.array_equal(bwd.Delta[-1], s.y)


@settings(max_examples=60, deadline=None)
@given(instances())
def test_exclusion_identity(inst):
    p, s = inst
    fwd = forward_pass(p, s.x)
    bwd = backward_pass(p, fwd, s)
    t = p.topology
    for l in range(1, t.n_layers + 1):
        for i in range(1, t.layer_widths[l] + 1):
            first = t.fan_in_set(i, l)[0]
            for j in t.fan_in_set(i, l):
                mu, var = oracle.exact_excluded_moments(p, fwd, (i, j, l))
                assert abs(bwd.mu_excl[l - 1][i - 1, j - first] - mu) <= 1e-12
                assert var <= fwd.sigma2[l - 1][i - 1]


@settings(max_examples=60, deadline=None)
@given(instances(), st.floats(0.5, 2.0))
def test_amplitude_invariance_without_eps(inst, c):
    p, s = inst
    R1 = update_step(p, s, eps=0.0)[2].R
    R2 = update_step(p, LabeledSample(c * s.x, s.y), eps=0.0)[2].R
    for a, b in zip(R1, R2):
        np.testing.assert_allclose(b, a, rtol=1e-9, atol=1e-300)


@settings(max_examples=60, deadline=None)
@given(instances(), st.floats(0.5, 2.0))
def test_amplitude_invariance_default_eps(inst, c):
    p, s = inst
    R1 = update_step(p, s)[2].R
    R2 = update_step(p, LabeledSample(c * s.x, s.y))[2].R
    for a, b in zip(R1, R2):
        np.testing.assert_allclose(b, a, rtol=1e-6, atol=1e-300)


def test_nan_freedom_long_adversarial_run():
    from mfbprop.verification import nan_freedom
    res = nan_freedom(100_000)
    assert res.passed, res.line()


@pytest.mark.parametrize("arch", [[7, 7, 1], [9, 3, 1], [4, 1], [12, 6, 3, 1], [20, 10, 2]])
@pytest.mark.parametrize("batch", [None, 3])
def test_learner_matches_reference(arch, batch):
    rng = np.random.default_rng(5)
    t = build(arch)
    shape = () if batch is None else (batch,)
    h = [rng.uniform(-1, 1, shape + s) for s in t.shapes]
    ref = PosteriorParams(t, [H.copy() for H in h])
    learner = MFBLearner(PosteriorParams(t, [H.copy() for H in h]))
    for _ in range(50):
        x = rng.standard_normal(shape + (t.input_dim,))
        y = rng.choice([-1.0, 1.0], shape + (t.output_dim,))
        nu = learner.step(x, y)
        if batch is None:
            fwd = forward_pass(ref, x)
            ref = update_step(ref, LabeledSample(x, y))[0]
            np.testing.assert_allclose(nu, fwd.nu[-1], atol=1e-12)
        else:
            new = []
            for b in range(batch):
                new.append(update_step(ref[b], LabeledSample(x[b], y[b]))[0])
            ref = PosteriorParams.stack(new)
    for a, b in zip(learner.params.h, ref.h):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
