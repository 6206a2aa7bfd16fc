"""Network outputs: the deterministic binary network and the ensemble mean."""
from __future__ import annotations

import numpy as np

from .engine import EPS, _dense, forward_pass
from .posterior import PosteriorParams, sign


def _layer_sums(W, v, l):
    W = np.asarray(W, dtype=float)
    if l == 1:
        return _dense(W, np.asarray(v, dtype=float))
    blocks = v.reshape(v.shape[:-1] + W.shape[-2:])
    return (W * blocks).sum(-1)


def bmnn_output_sums(weights, x):
    """Pre-sign inputs of the output layer of a binary network.

    For L >= 2 these are integers (stored as floats); for L = 1 they are
    real because the input is real.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != weights[0].shape[-1]:
        raise ValueError(f"input has length {x.shape[-1]}, expected {weights[0].shape[-1]}")
    v = x
    for l, W in enumerate(weights, 1):
        u = _layer_sums(W, v, l)
        if l == len(weights):
            return u
        v = np.where(u >= 0, 1.0, -1.0)


def bmnn_eval(weights, x):
    """v_L = sign(W_L sign(... sign(W_1 x))), with sign(0) = +1."""
    return sign(bmnn_output_sums(weights, x))


def pmfb_output(params: PosteriorParams, x, eps: float = EPS):
    """Ensemble-mean output nu_L and its sign."""
    nu = forward_pass(params, x, eps).nu[-1]
    return nu, sign(nu)


def classify(scores):
    """Label index (0-based) of the highest score; ties go to the lowest index."""
    scores = np.asarray(scores)
    if scores.size == 0 or scores.shape[-1] == 0:
        raise ValueError("cannot classify an empty score vector")
    return np.argmax(scores, axis=-1)
