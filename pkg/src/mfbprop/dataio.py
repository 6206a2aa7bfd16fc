"""MNIST in IDX format: loading, preprocessing and label encoding."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049
UBYTE = 0x08
DATA_DIR_ENV = "MFBPROP_DATA_DIR"

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IDXError(ValueError):
    pass


def parse_idx(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise IDXError("file too short for an IDX header")
    zero, dtype, ndim = struct.unpack_from(">HBB", data, 0)
    if zero != 0 or dtype != UBYTE or ndim == 0:
        magic = struct.unpack_from(">I", data, 0)[0]
        raise IDXError(f"bad IDX magic {magic} (only unsigned-byte tensors are supported)")
    if len(data) < 4 + 4 * ndim:
        raise IDXError("truncated IDX dimension header")
    dims = struct.unpack_from(f">{ndim}I", data, 4)
    count = 1
    for d in dims:
        count *= d
    if count > 2 ** 40:
        raise IDXError(f"IDX dimensions {dims} are implausibly large")
    payload = memoryview(data)[4 + 4 * ndim:]
    if len(payload) < count:
        raise IDXError(f"truncated IDX payload: expected {count} bytes, found {len(payload)}")
    if len(payload) > count:
        raise IDXError(f"IDX payload has {len(payload) - count} trailing bytes")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def load_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_idx(f.read())


def write_idx(path, array) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise IDXError("only uint8 arrays can be written")
    header = struct.pack(">HBB", 0, UBYTE, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(array).tobytes())


def default_data_dir():
    return os.environ.get(DATA_DIR_ENV)


def load_mnist(data_dir):
    """Return (train_images, train_labels, test_images, test_labels) as uint8 arrays."""
    if data_dir is None:
        raise FileNotFoundError(
            f"no MNIST directory given; pass --data-dir or set {DATA_DIR_ENV}"
        )
    data_dir = Path(data_dir)
    out = {}
    for key, name in MNIST_FILES.items():
        path = data_dir / name
        if not path.exists():
            raise FileNotFoundError(f"missing MNIST file {path}")
        out[key] = load_idx(path)
    return out["train_images"], out["train_labels"], out["test_images"], out["test_labels"]


@dataclass
class InputStats:
    mean: np.ndarray
    scale: float


def fit_stats(train_images) -> InputStats:
    x = np.asarray(train_images, dtype=float).reshape(len(train_images), -1)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    mean = x.mean(axis=0)
    scale = float(np.sqrt(((x - mean) ** 2).mean()))
    if scale == 0:
        scale = 1.0
    return InputStats(mean, scale)


def apply_stats(stats: InputStats, images, bias: bool = True) -> np.ndarray:
    n = len(images)
    flat = np.asarray(images).reshape(n, -1)
    d = flat.shape[1]
    out = np.empty((n, d + 1 if bias else d))
    np.subtract(flat, stats.mean, out=out[:, :d])
    out[:, :d] /= stats.scale
    if bias:
        out[:, d] = 1.0
    return out


def preprocess(train_images, test_images):
    """Center each feature on training means, scale by the global training std, append a 1.

    Returns (train, test, stats).
    """
    stats = fit_stats(train_images)
    return apply_stats(stats, train_images), apply_stats(stats, test_images), stats


def encode_label(label: int, n_classes: int = 10) -> np.ndarray:
    """y_k = 2 * [k == label] - 1."""
    if not 0 <= int(label) < n_classes:
        raise ValueError(f"label {label} out of range 0..{n_classes - 1}")
    y = -np.ones(n_classes)
    y[int(label)] = 1.0
    return y


def encode_labels(labels, n_classes: int = 10) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError("label out of range")
    return np.where(np.arange(n_classes) == labels[:, None], 1.0, -1.0)
