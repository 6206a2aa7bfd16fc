"""Invariant and oracle suites, shared by ``mfbprop verify`` and the acceptance tests.

Every suite returns a :class:`SuiteResult` with the number of individual
checks it made and how many failed.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import backprop, bitpack, engine, oracle, posterior, predictor
from .engine import EPS, LabeledSample
from .topology import build


@dataclass
class SuiteResult:
    name: str
    checks: int = 0
    failures: int = 0
    detail: str = ""
    seconds: float = 0.0
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.checks > 0 and self.failures == 0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.checks - self.failures}/{self.checks} checks ({self.detail})"


def _random_params(topo, rng, scale=1.0):
    return posterior.PosteriorParams(topo, [rng.uniform(-scale, scale, size=s) for s in topo.shapes])


def _random_sample(topo, rng):
    return LabeledSample(rng.standard_normal(topo.input_dim),
                         rng.choice([-1.0, 1.0], size=topo.output_dim))


_ARCHS = [[6, 1], [9, 3, 1], [8, 4, 2], [12, 6, 3, 1], [20, 10, 2]]


def amplitude_invariance(eps=0.0, n_cases=300, rng_seed=0, rtol=None):
    """R(c x, y) == R(x, y) for c in [0.5, 2]."""
    if rtol is None:
        rtol = 1e-9 if eps == 0 else 1e-6
    rng = np.random.default_rng(rng_seed)
    res = SuiteResult(f"amplitude invariance (eps={eps:g})")
    worst = 0.0
    for n in range(n_cases):
        topo = build(_ARCHS[n % len(_ARCHS)])
        params = _random_params(topo, rng, 2.0)
        s = _random_sample(topo, rng)
        c = rng.uniform(0.5, 2.0)
        R1 = engine.update_step(params, s, eps)[2].R
        R2 = engine.update_step(params, LabeledSample(c * s.x, s.y), eps)[2].R
        for a, b in zip(R1, R2):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-300)
            rel = float(np.max(np.abs(a - b) / denom))
            worst = max(worst, rel)
            res.checks += 1
            res.failures += rel > rtol
    res.detail = f"max rel diff {worst:.2e}, tol {rtol:g}"
    res.metrics["max_rel"] = worst
    return res


def zero_init_fixed_point(n_cases=200, rng_seed=1):
    rng = np.random.default_rng(rng_seed)
    res = SuiteResult("zero-init fixed point (L >= 2)")
    archs = [a for a in _ARCHS if len(a) > 2]
    for n in range(n_cases):
        topo = build(archs[n % len(archs)])
        params = posterior.zeros(topo)
        new, _, bwd = engine.update_step(params, _random_sample(topo, rng))
        res.checks += 1
        res.failures += not (all(np.all(R == 0) for R in bwd.R)
                             and all(np.array_equal(a, b) for a, b in zip(new.h, params.h)))
    res.detail = "R == 0 exactly and h unchanged"
    return res


def certain_consistent_fixed_point(n_cases=200, rng_seed=2, h_mag=30.0):
    """|h| = 30 realizing a weight set that labels the sample correctly with margin.

    Samples are kept only when every excluded mean agrees in sign with the label
    and is nonzero, which is the situation in which the guard's theta is 0.
    """
    rng = np.random.default_rng(rng_seed)
    res = SuiteResult("certain-consistent fixed point")
    worst = 0.0
    archs = [[3, 1], [5, 1], [9, 1], [16, 1]]
    while res.checks < n_cases:
        topo = build(archs[res.checks % len(archs)])
        W = rng.choice([-1.0, 1.0], size=topo.shapes[0])
        params = posterior.PosteriorParams(topo, [h_mag * W])
        x = rng.standard_normal(topo.input_dim)
        y = predictor.bmnn_eval([W], x).astype(float)
        fwd = engine.forward_pass(params, x)
        bwd = engine.backward_pass(params, fwd, LabeledSample(x, y))
        if not np.all(y[:, None] * bwd.mu_excl[0] > 0):
            continue
        m = max(float(np.max(np.abs(R))) for R in bwd.R)
        worst = max(worst, m)
        res.checks += 1
        res.failures += m >= 1e-8
    res.detail = f"max |R| = {worst:.2e}, tol 1e-08"
    res.metrics["max_abs_R"] = worst
    return res


def exclusion_identity(n_cases=200, rng_seed=3, tol=1e-12):
    rng = np.random.default_rng(rng_seed)
    res = SuiteResult("exclusion identity")
    worst = 0.0
    for n in range(n_cases):
        topo = build(_ARCHS[n % len(_ARCHS)])
        params = _random_params(topo, rng, 3.0)
        s = _random_sample(topo, rng)
        fwd = engine.forward_pass(params, s.x)
        bwd = engine.backward_pass(params, fwd, s)
        for l in range(1, topo.n_layers + 1):
            i = int(rng.integers(1, topo.layer_widths[l] + 1))
            for j in topo.fan_in_set(i, l):
                mu, _ = oracle.exact_excluded_moments(params, fwd, (i, j, l))
                col = j - topo.fan_in_set(i, l)[0]
                d = abs(float(bwd.mu_excl[l - 1][i - 1, col]) - mu)
                worst = max(worst, d)
                res.checks += 1
                res.failures += d > tol
    res.detail = f"max |diff| {worst:.2e}, tol {tol:g}"
    res.metrics["max_abs"] = worst
    return res


def nan_freedom(n_steps=100_000, rng_seed=4):
    """Adversarial stream: huge |h|, huge and tiny inputs, labels that flip."""
    rng = np.random.default_rng(rng_seed)
    res = SuiteResult("NaN-freedom")
    archs = [[3, 1], [5, 5, 1], [4, 2, 1], [6, 3, 3, 1]]
    params = None
    for n in range(n_steps):
        if n % 1000 == 0:
            topo = build(archs[(n // 1000) % len(archs)])
            mag = [1.0, 30.0, 300.0, 1e4][(n // 4000) % 4]
            params = _random_params(topo, rng, mag)
        topo = params.topology
        x = rng.standard_normal(topo.input_dim) * 10.0 ** rng.integers(-8, 9)
        if n % 7 == 0:
            x[rng.integers(topo.input_dim)] = 0.0
        y = np.full(topo.output_dim, 1.0 if (n // 3) % 2 else -1.0)
        params, fwd, bwd = engine.update_step(params, LabeledSample(x, y), inplace=True)
        ok = (params.is_finite()
              and all(np.all(np.isfinite(a)) for a in bwd.G + bwd.R + bwd.Delta))
        res.checks += 1
        res.failures += not ok
    res.detail = f"{n_steps} steps, h/G/Delta/R finite"
    return res


def moment_identity(n_cases=100_000, rng_seed=5):
    rng = np.random.default_rng(rng_seed)
    h = np.concatenate([rng.uniform(-5, 5, n_cases // 2), rng.uniform(-40, 40, n_cases - n_cases // 2)])
    err = np.abs(posterior.weight_mean(h) ** 2 + posterior.weight_var(h) - 1.0)
    res = SuiteResult("mean^2 + variance = 1", checks=len(h), failures=int((err > 1e-12).sum()))
    res.detail = f"max |err| {err.max():.2e}, tol 1e-12"
    return res


def forward_consistency(n_cases=300, rng_seed=6):
    rng = np.random.default_rng(rng_seed)
    res = SuiteResult("forward consistency")
    for n in range(n_cases):
        topo = build(_ARCHS[n % len(_ARCHS)])
        params = _random_params(topo, rng, [1.0, 10.0, 100.0][n % 3])
        fwd = engine.forward_pass(params, _random_sample(topo, rng).x)
        ok = all(np.all(s > 0) for s in fwd.sigma2) and all(np.all(np.abs(v) <= 1) for v in fwd.nu[1:])
        res.checks += 1
        res.failures += not ok
    res.detail = "sigma2 > 0, nu in [-1, 1]"
    return res


def oracle_sign_agreement(n_instances=210, rng_seed=7, threshold=0.9):
    frac, n, rows = oracle.sign_agreement_study(n_instances, rng_seed)
    res = SuiteResult("oracle sign agreement", checks=1, failures=int(not frac >= threshold))
    res.detail = f"{frac:.4f} over {n} weights in {n_instances} instances, target >= {threshold}"
    res.metrics.update(agreement=frac, scored=n, rows=rows)
    return res


def oracle_divergence(n_instances=200, rng_seed=8):
    rows = oracle.divergence_study(n_instances, rng_seed)
    bad = [r for r in rows if not (np.isfinite(r["engine_R"]) and r["agree"])]
    res = SuiteResult("oracle divergence", checks=len(rows), failures=len(bad))
    res.detail = f"{len(rows)} divergent exact ratios, engine R finite and sign-correct"
    return res


def mc_forward(n_samples=100_000, rng_seed=9, arch=(21, 7, 1), n_nets=3):
    """Forward means versus sampled sign networks at first-layer fan-in 21."""
    rng = np.random.default_rng(rng_seed)
    res = SuiteResult("Monte Carlo forward check")
    worst = 0.0
    topo = build(list(arch))
    for n in range(n_nets):
        params = _random_params(topo, rng, 1.0)
        x = rng.choice([-1.0, 1.0], size=topo.input_dim)
        nu = engine.forward_pass(params, x).nu[1:]
        means, errs = oracle.mc_forward_check(params, x, n_samples, int(rng.integers(2**32)))
        for a, m, e in zip(nu, means, errs):
            gap = np.abs(a - m)
            tol = np.maximum(0.05, 4 * e)
            worst = max(worst, float(np.max(gap / tol)))
            res.checks += gap.size
            res.failures += int((gap > tol).sum())
    res.detail = f"K_1={arch[0]}, n={n_samples}, worst gap/tol {worst:.3f}"
    return res


def gradient_check(n_seeds=100, arch=(4, 4, 1), step=1e-5, tol=1e-5):
    res = SuiteResult("BackProp gradient check")
    worst = 0.0
    topo = build(list(arch))
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        p = backprop.RealNetParams(topo, [rng.standard_normal(s) for s in topo.shapes])
        x = rng.standard_normal(topo.input_dim)
        y = rng.choice([-1.0, 1.0], size=topo.output_dim)
        analytic = np.concatenate([g.ravel() for g in backprop.gradient(p, x, y)])
        numeric = []
        for l, W in enumerate(p.W):
            for idx in np.ndindex(W.shape):
                old = W[idx]
                W[idx] = old + step
                up = backprop.loss(p, x, y)
                W[idx] = old - step
                down = backprop.loss(p, x, y)
                W[idx] = old
                numeric.append((up - down) / (2 * step))
        numeric = np.array(numeric)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
        worst = max(worst, rel)
        res.checks += 1
        res.failures += rel >= tol
    res.detail = f"max rel err {worst:.2e}, tol {tol:g}"
    res.metrics["max_rel"] = worst
    return res


def bitpack_equivalence(n_pairs=10_000, rng_seed=10):
    """Packed and unpacked evaluation agree exactly, even fan-in included."""
    rng = np.random.default_rng(rng_seed)
    archs = [[7, 7, 1], [8, 4, 1], [10, 5, 1], [65, 13, 1], [64, 16, 4, 2], [130, 10, 2], [5, 1]]
    res = SuiteResult("bit-packed equivalence")
    per = -(-n_pairs // len(archs))
    for a in archs:
        topo = build(a)
        for n in range(per):
            W = [rng.choice(np.array([-1, 1], dtype=np.int8), size=s) for s in topo.shapes]
            x = rng.choice([-1.0, 1.0], size=topo.input_dim) if n % 2 else rng.standard_normal(topo.input_dim)
            res.checks += 1
            res.failures += not np.array_equal(bitpack.packed_eval(bitpack.pack(W), x), predictor.bmnn_eval(W, x))
    res.detail = f"{res.checks} (network, input) pairs"
    return res


def run_all(eps=EPS, log=None):
    """Run every suite; ``eps`` feeds the second amplitude-invariance run."""
    suites = [
        lambda: amplitude_invariance(0.0),
        lambda: amplitude_invariance(eps),
        zero_init_fixed_point,
        certain_consistent_fixed_point,
        exclusion_identity,
        nan_freedom,
        moment_identity,
        forward_consistency,
        oracle_sign_agreement,
        oracle_divergence,
        mc_forward,
        gradient_check,
        bitpack_equivalence,
    ]
    results = []
    for suite in suites:
        t0 = time.perf_counter()
        r = suite()
        r.seconds = time.perf_counter() - t0
        if log:
            log(r.line())
        results.append(r)
    return results
