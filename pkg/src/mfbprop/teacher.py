"""Synthetic teacher-student data: a random M x M x 1 binary teacher."""
from __future__ import annotations

import warnings

import numpy as np

from .predictor import bmnn_eval
from .topology import build


def teacher_topology(m: int):
    if m < 1:
        raise ValueError(f"M must be >= 1, got {m}")
    return build([m, m, 1])


def make_teacher(m: int, rng_seed) -> list:
    """Weights of an M x M x 1 converging binary network, i.i.d. uniform on {-1, +1}."""
    topo = teacher_topology(m)
    if m % 2 == 0:
        warnings.warn(f"even M={m} allows zero sums; labels then rely on sign(0)=+1", stacklevel=2)
    rng = np.random.default_rng(rng_seed)
    return [rng.choice(np.array([-1, 1], dtype=np.int8), size=s) for s in topo.shapes]


def sample_stream(teacher, n: int, rng_seed):
    """``n`` inputs uniform on {-1, 1}^M and their teacher labels.

    Returns ``(X, Y)`` as int8 arrays of shape (n, M) and (n, 1).
    """
    m = teacher[0].shape[-1]
    rng = np.random.default_rng(rng_seed)
    X = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, m))
    Y = bmnn_eval(teacher, X)
    return X, Y
