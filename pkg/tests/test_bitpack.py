import numpy as np
import pytest

from mfbprop import bitpack
from mfbprop.bitpack import PackedFormatError, pack, packed_eval, unpack
from mfbprop.predictor import bmnn_eval
from mfbprop.topology import build

ARCHS = [[7, 7, 1], [8, 4, 1], [10, 5, 1], [65, 13, 1], [64, 16, 4, 2], [130, 10, 2], [5, 1], [200, 128, 2]]


def random_net(arch, rng):
    return [rng.choice(np.array([-1, 1], dtype=np.int8), s) for s in build(arch).shapes]


@pytest.mark.parametrize("arch", ARCHS)
def test_round_trip(arch, rng, tmp_path):
    W = random_net(arch, rng)
    net = pack(W)
    assert all(np.array_equal(a, b) for a, b in zip(unpack(net), W))
    bitpack.save(net, tmp_path / "n.bmnn")
    back = bitpack.load(tmp_path / "n.bmnn")
    assert back.layer_widths == net.layer_widths
    assert all(np.array_equal(a, b) for a, b in zip(back.words, net.words))
    bitpack.save(back, tmp_path / "m.bmnn")
    assert (tmp_path / "n.bmnn").read_bytes() == (tmp_path / "m.bmnn").read_bytes()


def test_bit_convention():
    # bit set <-> weight -1, least significant bit first
    net = pack([np.array([[1, -1, -1, 1]])])
    assert net.words[0].tolist() == [[0b0110]]


def test_word_padding():
    net = pack([np.ones((3, 65), dtype=np.int8)])
    assert net.words[0].shape == (3, 2)


@pytest.mark.parametrize("arch", ARCHS)
def test_equivalence(arch, rng):
    for n in range(200):
        W = random_net(arch, rng)
        X = rng.choice([-1.0, 1.0], (8, arch[0])) if n % 2 else rng.standard_normal((8, arch[0]))
        assert np.array_equal(packed_eval(pack(W), X), bmnn_eval(W, X))


def test_even_fan_in_ties_follow_sign_convention():
    # two +-1 inputs summing to zero at layer 2
    W = [np.array([[1], [-1]], dtype=np.int8), np.array([[1, 1]], dtype=np.int8)]
    out = packed_eval(pack(W), np.array([1.0]))
    assert out.tolist() == [1]
    assert np.array_equal(out, bmnn_eval(W, np.array([1.0])))


def test_rejects_non_binary():
    with pytest.raises(ValueError):
        pack([np.array([[1, 0]])])


def test_load_errors(tmp_path, rng):
    net = pack(random_net([8, 4, 1], rng))
    path = tmp_path / "n.bmnn"
    bitpack.save(net, path)
    data = path.read_bytes()
    cases = {
        "magic": b"XXXX" + data[4:],
        "truncated": data[:-3],
        "trailing": data + b"\0" * 8,
        "version": data[:4] + (9).to_bytes(4, "little") + data[8:],
        "header": data[:10],
    }
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(PackedFormatError):
            bitpack.load(tmp_path / name)


def test_input_dimension_checked(rng):
    with pytest.raises(ValueError):
        packed_eval(pack(random_net([5, 1], rng)), np.ones(6))
