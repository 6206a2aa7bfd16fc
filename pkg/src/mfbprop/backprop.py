"""Real-valued baseline: online BackProp on the same converging topology.

Activation s(u) = 1.7159 tanh(2u/3) on every layer, squared error
E = 0.5 * ||y - v_L||^2, plain gradient descent. Weights share the (V_l, K_l)
layout of the binary network; arrays may carry leading batch axes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .engine import _blocks, _dense
from .posterior import from_document, sign, to_document
from .topology import ConvergingTopology

AMPLITUDE = 1.7159
SLOPE = 2.0 / 3.0

# learning rates picked per teacher size for the synthetic task
TEACHER_ETA = {3: 0.1, 5: 3e-2, 7: 3e-2, 9: 3e-2, 21: 3e-3, 31: 3e-3, 51: 3e-3, 101: 1e-3}
MNIST_ETA = 1e-3


def activation(u):
    return AMPLITUDE * np.tanh(SLOPE * u)


def activation_grad(u):
    return AMPLITUDE * SLOPE / np.cosh(SLOPE * u) ** 2


def teacher_eta(m: int) -> float:
    try:
        return TEACHER_ETA[m]
    except KeyError:
        raise ValueError(f"no tabulated learning rate for M={m}; pass one explicitly") from None


@dataclass
class RealNetParams:
    topology: ConvergingTopology
    W: list = field(default_factory=list)
    eta: float = 1e-3

    def copy(self) -> "RealNetParams":
        return RealNetParams(self.topology, [w.copy() for w in self.W], self.eta)

    @classmethod
    def stack(cls, items) -> "RealNetParams":
        items = list(items)
        topo = items[0].topology
        W = [np.stack([p.W[l] for p in items]) for l in range(topo.n_layers)]
        return cls(topo, W, items[0].eta)

    def __getitem__(self, idx) -> "RealNetParams":
        return RealNetParams(self.topology, [w[idx] for w in self.W], self.eta)


def init_weights(topology: ConvergingTopology, rng_seed: int, eta: float = 1e-3) -> RealNetParams:
    """sqrt(K_l / 3) * W ~ U[-1, 1], i.e. unit-variance inputs give unit-variance sums."""
    rng = np.random.default_rng(rng_seed)
    W = []
    for v, k in topology.shapes:
        a = np.sqrt(3.0 / k)
        W.append(rng.uniform(-a, a, size=(v, k)))
    return RealNetParams(topology, W, eta)


def rmnn_forward(params: RealNetParams, x):
    """Returns (u, v): pre-activations per layer and activations with v[0] = x."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.topology.input_dim:
        raise ValueError(f"input has length {x.shape[-1]}, expected {params.topology.input_dim}")
    us, vs = [], [x]
    v = x
    for l, (W, shape) in enumerate(zip(params.W, params.topology.shapes), 1):
        u = _dense(W, v) if l == 1 else (W * _blocks(v, shape)).sum(-1)
        v = activation(u)
        us.append(u)
        vs.append(v)
    return us, vs


def loss(params: RealNetParams, x, y):
    v = rmnn_forward(params, x)[1][-1]
    return 0.5 * ((np.asarray(y, dtype=float) - v) ** 2).sum(-1)


def gradient(params: RealNetParams, x, y):
    """dE/dW for every layer. Fan-out 1 makes each hidden delta a single product."""
    return _gradient(params, x, y)[0]


def _gradient(params, x, y):
    y = np.asarray(y, dtype=float)
    us, vs = rmnn_forward(params, x)
    topo = params.topology
    grads = [None] * topo.n_layers
    delta = -(y - vs[-1]) * activation_grad(us[-1])
    for l in range(topo.n_layers, 0, -1):
        shape = topo.layer_shape(l)
        W = params.W[l - 1]
        inp = vs[0][..., None, :] if l == 1 else _blocks(vs[l - 1], shape)
        grads[l - 1] = delta[..., None] * inp
        if l > 1:
            back = delta[..., None] * W
            delta = back.reshape(back.shape[:-2] + (-1,)) * activation_grad(us[l - 2])
    return grads, us, vs


def backprop_step(params: RealNetParams, sample, inplace: bool = False) -> RealNetParams:
    grads = gradient(params, sample.x, sample.y)
    out = params if inplace else params.copy()
    for W, g in zip(out.W, grads):
        W -= out.eta * g
    return out


def train_step(params: RealNetParams, x, y):
    """In-place online update. Returns the output-layer input u_L seen before the update."""
    grads, us, _ = _gradient(params, x, y)
    for W, g in zip(params.W, grads):
        W -= params.eta * g
    return us[-1]


def clipped_weights(params: RealNetParams) -> list:
    """W_CBP = sign(W_BP), sign(0) = +1."""
    return [sign(W) for W in params.W]


def clipped_output(params: RealNetParams, x):
    """Output of the baseline network run with its clipped weights."""
    return rmnn_forward(RealNetParams(params.topology, clipped_weights(params), params.eta), x)[1][-1]


def save(params: RealNetParams, path) -> None:
    doc = to_document(params.topology, params.W, "rmnn")
    doc["eta"] = params.eta
    with open(path, "w") as f:
        json.dump(doc, f)


def load(path) -> RealNetParams:
    with open(path) as f:
        doc = json.load(f)
    topo, layers, kind = from_document(doc)
    if kind != "rmnn":
        raise ValueError(f"{path} holds a {kind!r} model, not rmnn")
    return RealNetParams(topo, layers, doc.get("eta", 1e-3))
