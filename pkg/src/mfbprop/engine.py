"""Mean-field Bayes backpropagation: one online update of the weight posterior.

A step is a forward pass that propagates Gaussian (CLT) summaries of each
neuron's normalized input, a backward pass that turns them into per-weight
log-likelihood ratios R, and the additive update h <- h + R/2. Both passes
read the same frozen parameters; every weight is updated afterwards.

All functions broadcast over leading batch axes of ``params.h`` and ``x``,
which is how independent trials are trained side by side.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import mean_sign, norm_cdf, norm_logpdf_at_zero
from .posterior import PosteriorParams

EPS = 2.0 ** -52


class DimensionError(ValueError):
    pass


@dataclass
class LabeledSample:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if not np.all(np.abs(self.y) == 1):
            raise ValueError("labels must be exactly +1 or -1")


@dataclass
class ForwardTrace:
    """Per-layer summaries; ``nu[0]`` is the input itself, ``mu[m-1]`` is layer m."""
    mu: list
    sigma2: list
    nu: list
    tanh_h: list = field(default=None, repr=False)


@dataclass
class BackwardTrace:
    """Per-weight quantities, indexed like ``params.h`` (entry l-1 is layer l).

    ``Delta[l-1]`` holds the delta of every layer-l weight; ``Delta[L]`` is
    the label vector that seeds the recursion.
    """
    mu_excl: list
    G: list
    Delta: list
    R: list


def _check_input(params, x):
    if x.shape[-1] != params.topology.input_dim:
        raise DimensionError(
            f"input has length {x.shape[-1]}, topology expects {params.topology.input_dim}"
        )


def _blocks(nu, shape):
    return nu.reshape(nu.shape[:-1] + shape)


def _dense(A, x):
    """Row sums A @ x over the last axis, for one matrix or a batch of them."""
    if A.ndim == 2:
        return x @ A.T
    return np.matmul(A, x[..., None])[..., 0]


def forward_pass(params: PosteriorParams, x, eps: float = EPS) -> ForwardTrace:
    x = np.asarray(x, dtype=float)
    _check_input(params, x)
    tanh_h = [np.tanh(H) for H in params.h]
    mus, sig2s, nus = [], [], [x]
    nu = x
    for l, (t, shape) in enumerate(zip(tanh_h, params.topology.shapes), 1):
        k = shape[1]
        if l == 1:
            # layer 1 reads the real-valued input; only the weights are random
            mu = _dense(t, x) / np.sqrt(k)
            s2 = _dense(1.0 - t * t, x * x) / k + eps
        else:
            tv = t * _blocks(nu, shape)
            mu = tv.sum(-1) / np.sqrt(k)
            # (1 - nu^2) + nu^2 sech^2(h) == 1 - nu^2 tanh^2(h)
            s2 = (1.0 - tv * tv).sum(-1) / k + eps
        nu = mean_sign(mu / np.sqrt(s2))
        mus.append(mu)
        sig2s.append(s2)
        nus.append(nu)
    return ForwardTrace(mus, sig2s, nus, tanh_h)


def backward_pass(params: PosteriorParams, trace: ForwardTrace, sample: LabeledSample) -> BackwardTrace:
    topo = params.topology
    x = sample.x
    y = sample.y
    _check_input(params, x)
    if y.shape[-1] != topo.output_dim:
        raise DimensionError(f"label has length {y.shape[-1]}, expected {topo.output_dim}")
    if trace.nu[0].shape != x.shape or not np.array_equal(trace.nu[0], x):
        raise DimensionError("trace was not produced from this sample's input")
    tanh_h = trace.tanh_h if trace.tanh_h is not None else [np.tanh(H) for H in params.h]

    L = topo.n_layers
    mu_excl, Gs, deltas, Rs = [None] * L, [None] * L, [None] * L + [y], [None] * L
    # delta of the single outgoing connection of each neuron in the current layer
    d_out = y
    for l in range(L, 0, -1):
        shape = topo.layer_shape(l)
        k = shape[1]
        sqk = np.sqrt(k)
        t = tanh_h[l - 1]
        inp = x[..., None, :] if l == 1 else _blocks(trace.nu[l - 1], shape)
        mu = trace.mu[l - 1][..., None]
        s2 = trace.sigma2[l - 1][..., None]

        mu_ex = mu - t * inp / sqk
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            dens = np.exp(norm_logpdf_at_zero(mu_ex, s2))
            if l == L:
                yi = y[..., None]
                G = (2.0 / sqk) * dens / norm_cdf(yi * mu_ex / np.sqrt(s2))
            else:
                G = (2.0 / sqk) * dens
        if l == L:
            bad = ~np.isfinite(G)
            if bad.any():
                # Phi underflowed: use the asymptotic form, theta(0) = 0
                asym = -2.0 * mu_ex / (s2 * sqk) * (yi * mu_ex < 0)
                G = np.where(bad, asym, G)

        d = d_out[..., None]
        tg = np.tanh(G)
        if l == 1:
            R = d * np.tanh(G * inp)
        else:
            R = d * tg * inp
        delta = d * tg * t

        mu_excl[l - 1], Gs[l - 1], deltas[l - 1], Rs[l - 1] = mu_ex, G, delta, R
        if l > 1:
            # neuron j of layer l-1 is input (j mod K_l) of block j // K_l
            d_out = delta.reshape(delta.shape[:-2] + (-1,))
    return BackwardTrace(mu_excl, Gs, deltas, Rs)


def update_step(params: PosteriorParams, sample: LabeledSample, eps: float = EPS,
                inplace: bool = False):
    """Run both passes on the frozen params, then apply h <- h + R/2.

    Returns ``(params, forward_trace, backward_trace)``. With ``inplace`` the
    given params are modified and returned.
    """
    fwd = forward_pass(params, sample.x, eps)
    bwd = backward_pass(params, fwd, sample)
    if inplace:
        for H, R in zip(params.h, bwd.R):
            H += 0.5 * R
        out = params
    else:
        out = PosteriorParams(params.topology, [H + 0.5 * R for H, R in zip(params.h, bwd.R)])
    return out, fwd, bwd
