"""Independent checks of the engine's approximations on small networks.

The exact likelihoods here make no Gaussian or large-fan-in assumption.
They sum over weight configurations directly, with theta(0) = 0: a neuron
whose input is exactly zero fires neither way, so that configuration is
dropped. Indices in the public API are 1-based, as in (i, j, l) = weight from
neuron j of layer l-1 into neuron i of layer l.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .engine import EPS, LabeledSample, backward_pass, forward_pass
from .posterior import PosteriorParams

MAX_BRUTE_FORCE_WEIGHTS = 22
MAX_ENUMERATED_FAN_IN = 20


class InstanceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class LikelihoodRatio:
    """ln P(y | W=+1) / P(y | W=-1), with divergent cases tagged rather than stored as inf."""
    kind: str  # "finite", "+inf", "-inf" or "undefined" (both likelihoods zero)
    value: float | None
    p_plus: float
    p_minus: float

    @property
    def sign(self) -> int:
        if self.kind == "+inf":
            return 1
        if self.kind == "-inf":
            return -1
        if self.kind == "finite":
            return int(np.sign(self.value))
        return 0

    @property
    def is_divergent(self) -> bool:
        return self.kind in ("+inf", "-inf")

    def __str__(self):
        return f"{self.value!r}" if self.kind == "finite" else self.kind


def _ratio(p_plus, p_minus) -> LikelihoodRatio:
    if p_plus > 0 and p_minus > 0:
        return LikelihoodRatio("finite", math.log(p_plus / p_minus), p_plus, p_minus)
    if p_plus > 0:
        return LikelihoodRatio("+inf", None, p_plus, p_minus)
    if p_minus > 0:
        return LikelihoodRatio("-inf", None, p_plus, p_minus)
    return LikelihoodRatio("undefined", None, p_plus, p_minus)


def _weight_pos(topology, idx):
    """Map 1-based (i, j, l) to 0-based (layer, row, column) in the (V_l, K_l) storage."""
    i, j, l = idx
    if j not in topology.fan_in_set(i, l):
        raise ValueError(f"neuron {j} of layer {l - 1} does not feed neuron {i} of layer {l}")
    first = topology.fan_in_set(i, l)[0]
    return l - 1, i - 1, j - first


def _configs(k):
    return np.array(list(itertools.product((1.0, -1.0), repeat=k))) if k else np.zeros((1, 0))


# -- layer-recursive exact likelihood ---------------------------------------

def _first_layer_neuron(x, p_plus_w, fixed=None):
    """(P(v=+1), P(v=-1)) for a neuron reading real input x, enumerating its weights."""
    k = len(x)
    W = _configs(k)
    prob = np.where(W > 0, p_plus_w, 1.0 - p_plus_w)
    if fixed is not None:
        pos, w = fixed
        keep = W[:, pos] == w
        W, prob = W[keep], prob[keep]
        prob[:, pos] = 1.0
    weight = prob.prod(axis=1)
    s = W @ x
    return weight[s > 0].sum(), weight[s < 0].sum()


def _deep_neuron(p_in, p_plus_w, fixed=None):
    """Same for a neuron with +-1 inputs of (sub-normalized) measures p_in[r] = (P+, P-).

    Inputs come from disjoint subtrees, so they are independent; the sum of the
    products v_r * W_r is then an exact convolution.
    """
    q_plus = np.array(p_plus_w, dtype=float)
    q_minus = 1.0 - q_plus
    if fixed is not None:
        pos, w = fixed
        q_plus[pos], q_minus[pos] = (1.0, 0.0) if w > 0 else (0.0, 1.0)
    k = len(q_plus)
    dist = np.zeros(2 * k + 1)
    dist[k] = 1.0  # offset so index k is sum 0
    for r in range(k):
        a = p_in[r][0] * q_plus[r] + p_in[r][1] * q_minus[r]  # product = +1
        b = p_in[r][0] * q_minus[r] + p_in[r][1] * q_plus[r]  # product = -1
        new = np.zeros_like(dist)
        new[1:] += a * dist[:-1]
        new[:-1] += b * dist[1:]
        dist = new
    return dist[k + 1:].sum(), dist[:k].sum()


def _output_measures(params: PosteriorParams, x, fixed=None):
    topo = params.topology
    p_plus_w = [(1.0 + np.tanh(H)) / 2.0 for H in params.h]
    measures = None
    for l, (v, k) in enumerate(topo.shapes, 1):
        layer = []
        for i in range(v):
            fx = None
            if fixed is not None and fixed[0] == l - 1 and fixed[1] == i:
                fx = (fixed[2], fixed[3])
            if l == 1:
                layer.append(_first_layer_neuron(x, p_plus_w[0][i], fx))
            else:
                layer.append(_deep_neuron(measures[i * k:(i + 1) * k], p_plus_w[l - 1][i], fx))
        measures = layer
    return measures


def exact_likelihoods(params: PosteriorParams, sample: LabeledSample, idx):
    """(P(y | W_ij,l = +1), P(y | W_ij,l = -1)) under the factorized prior, no CLT."""
    topo = params.topology
    if params.batch_shape:
        raise ValueError("oracle works on a single network")
    if topo.fan_in[0] > MAX_ENUMERATED_FAN_IN:
        raise InstanceTooLarge(f"first-layer fan-in {topo.fan_in[0]} > {MAX_ENUMERATED_FAN_IN}")
    lay, row, col = _weight_pos(topo, idx)
    x = np.asarray(sample.x, dtype=float)
    y = np.asarray(sample.y)
    out = []
    for w in (1.0, -1.0):
        meas = _output_measures(params, x, (lay, row, col, w))
        out.append(math.prod(m[0] if yk > 0 else m[1] for m, yk in zip(meas, y)))
    return out[0], out[1]


def exact_likelihood_ratio(params: PosteriorParams, sample: LabeledSample, idx) -> LikelihoodRatio:
    return _ratio(*exact_likelihoods(params, sample, idx))


# -- brute force over every weight configuration -----------------------------

def _network_outputs(topo, layers, x):
    """Evaluate many weight configurations; returns (+-1 outputs, any-tie flag)."""
    v = layers[0] @ x  # (n, V_1)
    tie = (v == 0).any(axis=1)
    v = np.sign(v)
    for l in range(2, topo.n_layers + 1):
        vl, k = topo.layer_shape(l)
        s = (layers[l - 1] * v.reshape(len(v), vl, k)).sum(-1)
        tie |= (s == 0).any(axis=1)
        v = np.sign(s)
    return v, tie


def brute_force_likelihoods(params: PosteriorParams, sample: LabeledSample, idx, chunk: int = 1 << 16):
    """Same quantity as :func:`exact_likelihoods`, by summing over all 2^|W| configurations."""
    topo = params.topology
    n_w = topo.n_weights
    if n_w > MAX_BRUTE_FORCE_WEIGHTS:
        raise InstanceTooLarge(f"{n_w} weights > {MAX_BRUTE_FORCE_WEIGHTS}")
    lay, row, col = _weight_pos(topo, idx)
    offsets = np.cumsum([0] + [v * k for v, k in topo.shapes])
    flat_fixed = offsets[lay] + row * topo.shapes[lay][1] + col
    p_plus = np.concatenate([((1.0 + np.tanh(H)) / 2.0).ravel() for H in params.h])
    x = np.asarray(sample.x, dtype=float)
    y = np.asarray(sample.y, dtype=float)

    totals = {1.0: 0.0, -1.0: 0.0}
    n_free = n_w - 1
    free = [c for c in range(n_w) if c != flat_fixed]
    for w in (1.0, -1.0):
        for start in range(0, 2 ** n_free, chunk):
            codes = np.arange(start, min(start + chunk, 2 ** n_free))
            bits = (codes[:, None] >> np.arange(n_free)) & 1
            cfg = np.empty((len(codes), n_w))
            cfg[:, free] = 1.0 - 2.0 * bits
            cfg[:, flat_fixed] = w
            prob = np.where(cfg[:, free] > 0, p_plus[free], 1.0 - p_plus[free]).prod(axis=1)
            layers = [cfg[:, offsets[m]:offsets[m + 1]].reshape((len(codes),) + topo.shapes[m])
                      for m in range(topo.n_layers)]
            out, tie = _network_outputs(topo, layers, x)
            ok = ~tie & (out == y).all(axis=1)
            totals[w] += prob[ok].sum()
    return totals[1.0], totals[-1.0]


# -- exact excluded moments ---------------------------------------------------

def exact_excluded_moments(params: PosteriorParams, trace, idx):
    """Mean and variance of neuron i's normalized input with weight (i, j) removed.

    Direct sums over K(i, l) without j, and without the eps variance floor.
    """
    topo = params.topology
    lay, row, col = _weight_pos(topo, idx)
    k = topo.fan_in[lay]
    t = np.tanh(params.h[lay][row])
    if lay == 0:
        inp = np.asarray(trace.nu[0], dtype=float)
    else:
        inp = np.asarray(trace.nu[lay])[row * k:(row + 1) * k]
    keep = np.arange(k) != col
    mu = (t[keep] * inp[keep]).sum() / math.sqrt(k)
    if lay == 0:
        var = (inp[keep] ** 2 * (1.0 - t[keep] ** 2)).sum() / k
    else:
        var = (1.0 - inp[keep] ** 2 * t[keep] ** 2).sum() / k
    return mu, var


# -- Monte Carlo forward check ----------------------------------------------

def mc_forward_check(params: PosteriorParams, x, n_samples: int, rng_seed, chunk: int = 10_000):
    """Sample weight sets from the posterior and run the exact sign network.

    Returns (means, stderrs): per layer m = 1..L, the empirical <v_{k,m}> and
    its binomial standard error.
    """
    if n_samples < 1000:
        raise ValueError("need at least 1000 samples")
    rng = np.random.default_rng(rng_seed)
    topo = params.topology
    x = np.asarray(x, dtype=float)
    p_plus = [(1.0 + np.tanh(H)) / 2.0 for H in params.h]
    sums = [np.zeros(v) for v in topo.layer_widths[1:]]
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        v = x
        for l, (p, shape) in enumerate(zip(p_plus, topo.shapes), 1):
            W = np.where(rng.random((n,) + shape) < p, 1.0, -1.0)
            if l == 1:
                u = W @ x
            else:
                u = (W * v.reshape(n, *shape)).sum(-1)
            v = np.where(u >= 0, 1.0, -1.0)
            sums[l - 1] += v.sum(axis=0)
        done += n
    means = [s / n_samples for s in sums]
    stderrs = [np.sqrt(np.clip(1.0 - m * m, 0.0, None) / n_samples) for m in means]
    return means, stderrs


# -- studies ---------------------------------------------------------------

REPORT_FIELDS = ["instance", "arch", "i", "j", "l", "exact", "p_plus", "p_minus", "engine_R", "agree"]


def engine_ratios(params: PosteriorParams, sample: LabeledSample, eps: float = EPS):
    trace = forward_pass(params, sample.x, eps)
    return backward_pass(params, trace, sample).R


def _all_weights(topo):
    for l in range(1, topo.n_layers + 1):
        for i in range(1, topo.layer_widths[l] + 1):
            for j in topo.fan_in_set(i, l):
                yield i, j, l


def compare_instance(params, sample, instance_id=0):
    """One report row per weight: exact log-ratio versus engine R."""
    R = engine_ratios(params, sample)
    rows = []
    for idx in _all_weights(params.topology):
        exact = exact_likelihood_ratio(params, sample, idx)
        lay, row, col = _weight_pos(params.topology, idx)
        r = float(R[lay][row, col])
        agree = exact.sign != 0 and int(np.sign(r)) == exact.sign
        rows.append({
            "instance": instance_id, "arch": str(params.topology),
            "i": idx[0], "j": idx[1], "l": idx[2],
            "exact": exact, "p_plus": exact.p_plus, "p_minus": exact.p_minus,
            "engine_R": r, "agree": agree,
        })
    return rows


def random_instance(topology, rng, h_range=1.0, binary_input=True):
    h = [rng.uniform(-h_range, h_range, size=s) for s in topology.shapes]
    if binary_input:
        x = rng.choice([-1.0, 1.0], size=topology.input_dim)
    else:
        x = rng.standard_normal(topology.input_dim)
    y = rng.choice([-1.0, 1.0], size=topology.output_dim)
    return PosteriorParams(topology, h), LabeledSample(x, y)


def sign_agreement_study(n_instances=210, rng_seed=0, fan_ins=(5, 7, 9), min_abs_ratio=0.1):
    """K x K x 1 networks, h ~ U[-1, 1], x in {-1, 1}^K.

    Returns (agreement fraction over qualifying weights, qualifying count, all rows).
    A weight qualifies when both exact likelihoods are positive and the exact
    log-ratio exceeds ``min_abs_ratio`` in magnitude.
    """
    from .topology import build

    rng = np.random.default_rng(rng_seed)
    rows = []
    for n in range(n_instances):
        k = fan_ins[n % len(fan_ins)]
        params, sample = random_instance(build([k, k, 1]), rng)
        rows.extend(compare_instance(params, sample, n))
    scored = [r for r in rows if r["exact"].kind == "finite" and abs(r["exact"].value) > min_abs_ratio]
    frac = sum(r["agree"] for r in scored) / len(scored) if scored else float("nan")
    return frac, len(scored), rows


def divergence_study(n_instances=100, rng_seed=0):
    """Instances where an exact likelihood vanishes.

    Single-layer networks with one dominant real input: fixing that weight can
    make the label impossible. Returns the rows with a divergent exact ratio.
    """
    from .topology import build

    rng = np.random.default_rng(rng_seed)
    rows = []
    for n in range(n_instances):
        k = int(rng.integers(2, 8))
        params, sample = random_instance(build([k, 1]), rng, h_range=2.0, binary_input=False)
        x = sample.x.copy()
        x[rng.integers(k)] = rng.choice([-1.0, 1.0]) * (np.abs(x).sum() + 1.0)
        sample = LabeledSample(x, sample.y)
        rows.extend(r for r in compare_instance(params, sample, n) if r["exact"].is_divergent)
    return rows


def write_report(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "exact": str(r["exact"]), "agree": int(r["agree"])})
