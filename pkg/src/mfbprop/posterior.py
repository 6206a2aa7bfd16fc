"""Factorized weight posterior stored as per-weight log-odds ``h``.

P(W = +1) = e^h / (e^h + e^-h), so the mean weight is tanh(h) and its
variance sech^2(h). Layer ``l`` is a (V_l, K_l) array; row ``i`` holds the
weights of neuron ``i`` over its fan-in block. Arrays may carry leading
batch axes (independent networks with a shared topology).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .topology import ConvergingTopology, build

FORMAT_VERSION = 1


@dataclass
class PosteriorParams:
    topology: ConvergingTopology
    h: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.h) != self.topology.n_layers:
            raise ValueError(
                f"expected {self.topology.n_layers} layers, got {len(self.h)}"
            )
        for l, (H, shape) in enumerate(zip(self.h, self.topology.shapes), 1):
            if H.shape[-2:] != shape:
                raise ValueError(f"layer {l}: shape {H.shape} does not end in {shape}")

    @property
    def batch_shape(self) -> tuple:
        return self.h[0].shape[:-2]

    def copy(self) -> "PosteriorParams":
        return PosteriorParams(self.topology, [H.copy() for H in self.h])

    def scaled(self, c: float) -> "PosteriorParams":
        return PosteriorParams(self.topology, [c * H for H in self.h])

    def is_finite(self) -> bool:
        return all(np.isfinite(H).all() for H in self.h)

    def __getitem__(self, idx) -> "PosteriorParams":
        """Select networks along the leading batch axes."""
        return PosteriorParams(self.topology, [H[idx] for H in self.h])

    @classmethod
    def stack(cls, items) -> "PosteriorParams":
        items = list(items)
        topo = items[0].topology
        return cls(topo, [np.stack([p.h[l] for p in items]) for l in range(topo.n_layers)])


def init_prior(topology: ConvergingTopology, rng_seed: int) -> PosteriorParams:
    """Uniform initial log-odds with sqrt(K_l / 3) * h ~ U[-1, 1]."""
    rng = np.random.default_rng(rng_seed)
    h = []
    for v, k in topology.shapes:
        a = np.sqrt(3.0 / k)
        h.append(rng.uniform(-a, a, size=(v, k)))
    return PosteriorParams(topology, h)


def zeros(topology: ConvergingTopology) -> PosteriorParams:
    return PosteriorParams(topology, [np.zeros(s) for s in topology.shapes])


def weight_mean(h):
    return np.tanh(h)


def weight_var(h):
    return 1.0 / np.cosh(h) ** 2


def sign(a):
    """Elementwise sign in {-1, +1} with sign(0) = +1."""
    return np.where(np.asarray(a) >= 0, 1, -1).astype(np.int8)


def clip_map(params: PosteriorParams) -> list:
    """MAP binary weights W* = sign(h)."""
    return [sign(H) for H in params.h]


# -- text serialization -----------------------------------------------------

def to_document(topology: ConvergingTopology, layers, kind: str = "mfb") -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "layer_widths": list(topology.layer_widths),
        # float() repr is shortest round-trip, so json keeps full precision
        "layers": [[float(v) for v in np.asarray(a, dtype=float).ravel()] for a in layers],
    }


def from_document(doc: dict):
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
    topo = build(doc["layer_widths"])
    layers = []
    for flat, shape in zip(doc["layers"], topo.shapes):
        arr = np.asarray(flat, dtype=float)
        if arr.size != shape[0] * shape[1]:
            raise ValueError(f"layer has {arr.size} values, expected {shape}")
        layers.append(arr.reshape(shape))
    if len(layers) != topo.n_layers:
        raise ValueError("layer count does not match layer_widths")
    return topo, layers, doc.get("kind", "mfb")


def save(params: PosteriorParams, path) -> None:
    if params.batch_shape:
        raise ValueError("can only save a single network")
    with open(path, "w") as f:
        json.dump(to_document(params.topology, params.h, "mfb"), f)


def load(path) -> PosteriorParams:
    with open(path) as f:
        topo, layers, kind = from_document(json.load(f))
    if kind != "mfb":
        raise ValueError(f"{path} holds a {kind!r} model, not mfb")
    return PosteriorParams(topo, layers)
