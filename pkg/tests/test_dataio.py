import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mfbprop import dataio
from mfbprop.dataio import IDXError, apply_stats, encode_label, encode_labels, fit_stats, parse_idx, write_idx


def test_header_layout(tmp_path):
    a = np.arange(6, dtype=np.uint8).reshape(2, 3)
    write_idx(tmp_path / "a", a)
    data = (tmp_path / "a").read_bytes()
    assert data[:4] == bytes([0, 0, 8, 2])
    assert struct.unpack(">II", data[4:12]) == (2, 3)
    assert struct.unpack(">I", data[:4])[0] == dataio.IMAGES_MAGIC - 1  # 2-d tensor


@settings(deadline=None, max_examples=30)
@given(arrays(np.uint8, st.tuples(st.integers(0, 5), st.integers(1, 4), st.integers(1, 4))))
def test_round_trip_byte_exact(tmp_path_factory, a):
    d = tmp_path_factory.mktemp("idx")
    write_idx(d / "a", a)
    b = dataio.load_idx(d / "a")
    assert np.array_equal(a, b)
    write_idx(d / "b", b)
    assert (d / "a").read_bytes() == (d / "b").read_bytes()


def test_label_magic():
    blob = struct.pack(">I", dataio.LABELS_MAGIC) + struct.pack(">I", 3) + bytes([1, 2, 3])
    assert parse_idx(blob).tolist() == [1, 2, 3]


def test_bad_files():
    good = struct.pack(">HBB", 0, 8, 1) + struct.pack(">I", 4) + bytes(4)
    assert parse_idx(good).shape == (4,)
    for blob in [b"", good[:2], b"\x12\x34" + good[2:], good[:6], good[:-1], good + b"\0"]:
        with pytest.raises(IDXError):
            parse_idx(blob)
    with pytest.raises(IDXError):
        parse_idx(struct.pack(">HBB", 0, 0x0D, 1) + struct.pack(">I", 1) + bytes(4))


def test_missing_files(tmp_path):
    with pytest.raises(FileNotFoundError):
        dataio.load_mnist(tmp_path)
    with pytest.raises(FileNotFoundError):
        dataio.load_mnist(None)


def test_preprocessing(rng):
    imgs = rng.integers(0, 256, (50, 4, 4)).astype(np.uint8)
    imgs[:, 0, 0] = 0  # constant pixel: global scale keeps it finite
    train, test, stats = dataio.preprocess(imgs, imgs[:10])
    assert train.shape == (50, 17)
    assert np.all(train[:, -1] == 1.0)
    np.testing.assert_allclose(train[:, :-1].mean(axis=0), 0, atol=1e-12)
    assert train[:, :-1].std() == pytest.approx(1.0, rel=1e-12)
    assert np.all(np.isfinite(train))
    np.testing.assert_array_equal(test, train[:10])


def test_preprocessing_idempotent_given_stats(rng):
    imgs = rng.integers(0, 256, (30, 9)).astype(np.uint8)
    stats = fit_stats(imgs)
    a = apply_stats(stats, imgs)
    b = apply_stats(stats, imgs)
    assert np.array_equal(a, b)


def test_label_encoding():
    assert encode_label(3).tolist() == [-1, -1, -1, 1, -1, -1, -1, -1, -1, -1]
    Y = encode_labels([0, 9])
    assert Y[0, 0] == 1 and Y[1, 9] == 1 and Y.sum() == 2 * (1 - 9)
    with pytest.raises(ValueError):
        encode_label(10)
    with pytest.raises(ValueError):
        encode_labels([-1])
