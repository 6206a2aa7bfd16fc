"""Streamlined online loop for the update in :mod:`mfbprop.engine`.

``engine.update_step`` keeps every intermediate for inspection. Training
runs over millions of weights only need the updated posterior, so this
learner caches tanh(h) between steps, reuses buffers for the first layer,
and skips the first-layer delta (nothing consumes it). Results agree with
``engine.update_step`` to rounding.
"""
from __future__ import annotations

import numpy as np

from .engine import EPS, _blocks, _dense
from .gaussian import mean_sign, norm_cdf
from .posterior import PosteriorParams, clip_map

_LOG_2PI = np.log(2.0 * np.pi)


class MFBLearner:
    def __init__(self, params: PosteriorParams, eps: float = EPS):
        self.params = params
        self.topology = params.topology
        self.eps = eps
        self._t = [np.tanh(H) for H in params.h]
        self._buf = np.empty_like(params.h[0])
        # 1 - tanh^2 of the first layer, kept in sync with self._t[0]
        self._sech2 = 1.0 - self._t[0] ** 2
        # output-layer G entries that needed the asymptotic substitute so far
        self.guard_hits = 0

    def forward(self, x):
        """Per-layer (mu, sigma2, nu) lists using the cached tanh(h)."""
        mus, s2s, nus = [], [], [x]
        nu = x
        for l, (t, shape) in enumerate(zip(self._t, self.topology.shapes), 1):
            k = shape[1]
            if l == 1:
                mu = _dense(t, x) / np.sqrt(k)
                s2 = _dense(self._sech2, x * x) / k + self.eps
            else:
                tv = t * _blocks(nu, shape)
                mu = tv.sum(-1) / np.sqrt(k)
                s2 = (1.0 - tv * tv).sum(-1) / k + self.eps
            nu = mean_sign(mu / np.sqrt(s2))
            mus.append(mu)
            s2s.append(s2)
            nus.append(nu)
        return mus, s2s, nus

    def predict_mean(self, X):
        """Ensemble-mean output nu_L for one input or a batch of inputs."""
        return self.forward(np.asarray(X, dtype=float))[2][-1]

    def predict_scores(self, X):
        """mu_L / sigma_L: same ordering as nu_L, without saturating at +-1."""
        mus, s2s, _ = self.forward(np.asarray(X, dtype=float))
        return mus[-1] / np.sqrt(s2s[-1])

    def map_weights(self):
        return clip_map(self.params)

    def step(self, x, y):
        """One online update. Returns nu_L computed before the update."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        mus, s2s, nus = self.forward(x)
        L = self.topology.n_layers
        d_out = y
        Rs = [None] * L
        for l in range(L, 1, -1):
            shape = self.topology.layer_shape(l)
            sqk = np.sqrt(shape[1])
            t = self._t[l - 1]
            inp = _blocks(nus[l - 1], shape)
            mu = mus[l - 1][..., None]
            s2 = s2s[l - 1][..., None]
            mu_ex = mu - t * inp / sqk
            with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
                G = (2.0 / sqk) * np.exp(-0.5 * (mu_ex * mu_ex / s2 + _LOG_2PI + np.log(s2)))
                if l == L:
                    yi = y[..., None]
                    G = G / norm_cdf(yi * mu_ex / np.sqrt(s2))
            if l == L:
                G = self._guard(G, mu_ex, s2, yi, sqk)
            d = d_out[..., None]
            tg = np.tanh(G)
            Rs[l - 1] = d * tg * inp
            delta = d * tg * t
            d_out = delta.reshape(delta.shape[:-2] + (-1,))

        self._layer1(x, y if L == 1 else None, mus[0], s2s[0], d_out)
        for l in range(2, L + 1):
            H = self.params.h[l - 1]
            H += 0.5 * Rs[l - 1]
            np.tanh(H, out=self._t[l - 1])
        return nus[-1]

    def _layer1(self, x, y, mu, s2, d_out):
        H, t, buf = self.params.h[0], self._t[0], self._buf
        k = self.topology.fan_in[0]
        sqk = np.sqrt(k)
        mu = mu[..., None]
        s2 = s2[..., None]
        xs = x[..., None, :]
        # buf <- mu_ex
        np.multiply(t, xs / sqk, out=buf)
        np.subtract(mu, buf, out=buf)
        if y is not None:
            # single-layer network: the output guard applies here
            with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
                G = (2.0 / sqk) * np.exp(-0.5 * (buf * buf / s2 + _LOG_2PI + np.log(s2)))
                yi = y[..., None]
                G = G / norm_cdf(yi * buf / np.sqrt(s2))
            G = self._guard(G, buf, s2, yi, sqk)
            buf[...] = G
        else:
            with np.errstate(under="ignore"):
                np.square(buf, out=buf)
                np.multiply(buf, -0.5 / s2, out=buf)
                np.add(buf, np.log(2.0 / sqk) - 0.5 * (_LOG_2PI + np.log(s2)), out=buf)
                np.exp(buf, out=buf)
        np.multiply(buf, xs, out=buf)
        np.tanh(buf, out=buf)
        np.multiply(buf, 0.5 * d_out[..., None], out=buf)
        H += buf
        np.tanh(H, out=t)
        np.multiply(t, t, out=self._sech2)
        np.subtract(1.0, self._sech2, out=self._sech2)

    def _guard(self, G, mu_ex, s2, yi, sqk):
        bad = ~np.isfinite(G)
        if bad.any():
            self.guard_hits += int(bad.sum())
            asym = -2.0 * mu_ex / (s2 * sqk) * (yi * mu_ex < 0)
            G = np.where(bad, asym, G)
        return G

