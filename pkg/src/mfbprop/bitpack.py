"""Bit-packed evaluation of a binary network.

One bit per weight, set when the weight is -1 (so +1 packs to 0). Each
neuron's row is padded to whole 64-bit words. Layers fed by +-1 activations
use XOR + popcount: dot = K - 2 * popcount(w ^ v). Layer 1 reads real inputs
and adds or subtracts them according to the weight bit.

File layout (little-endian): b"BMNN", u32 version, u32 convention,
u32 n_layers, u32 widths[n_layers + 1], zero padding to 8 bytes, then for
each layer its V_l x ceil(K_l / 64) u64 words in row-major order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .topology import build

MAGIC = b"BMNN"
VERSION = 1
NEG_IS_ONE = 1  # the only convention written: bit 1 <-> weight -1


class PackedFormatError(ValueError):
    pass


@dataclass
class PackedNetwork:
    layer_widths: tuple
    fan_in: tuple
    words: list
    convention: int = NEG_IS_ONE
    _neg1: np.ndarray = field(default=None, repr=False)

    @property
    def n_layers(self):
        return len(self.words)

    def first_layer_mask(self):
        if self._neg1 is None:
            self._neg1 = _unpack_bits(self.words[0], self.fan_in[0])
        return self._neg1


def _n_words(k):
    return -(-k // 64)


def _pack_bits(bits):
    """Pack a (..., K) bool array into (..., ceil(K/64)) uint64 words, LSB first."""
    k = bits.shape[-1]
    nw = _n_words(k)
    pad = nw * 64 - k
    if pad:
        bits = np.concatenate([bits, np.zeros(bits.shape[:-1] + (pad,), dtype=bool)], axis=-1)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8")


def _unpack_bits(words, k):
    raw = np.ascontiguousarray(words).astype("<u8", copy=False).view(np.uint8)
    return np.unpackbits(raw, axis=-1, bitorder="little")[..., :k].astype(bool)


def pack(weights) -> PackedNetwork:
    topo = build([weights[0].shape[1]] + [w.shape[0] for w in weights])
    for w, shape in zip(weights, topo.shapes):
        if w.shape != shape:
            raise ValueError(f"weight shape {w.shape} does not match topology {shape}")
        if not np.all(np.abs(w) == 1):
            raise ValueError("weights must be +1 or -1")
    words = [_pack_bits(np.asarray(w) < 0) for w in weights]
    return PackedNetwork(topo.layer_widths, topo.fan_in, words)


def unpack(net: PackedNetwork) -> list:
    out = []
    for w, k in zip(net.words, net.fan_in):
        bits = _unpack_bits(w, k)
        out.append(np.where(bits, -1, 1).astype(np.int8))
    return out


def packed_eval(net: PackedNetwork, x):
    """Network output in {-1, +1}, identical to ``predictor.bmnn_eval``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.layer_widths[0]:
        raise ValueError(f"input has length {x.shape[-1]}, expected {net.layer_widths[0]}")
    # real inputs: add where the weight bit is 0, subtract where it is 1;
    # done as one product so rounding matches the unpacked evaluator
    signs = np.where(net.first_layer_mask(), -1.0, 1.0)
    u = x @ signs.T
    act = u < 0  # activation bits: 1 <-> -1
    for l in range(1, net.n_layers):
        v_l, k = net.layer_widths[l + 1], net.fan_in[l]
        blocks = act.reshape(act.shape[:-1] + (v_l, k))
        vw = _pack_bits(blocks)
        pop = np.bitwise_count(vw ^ net.words[l]).sum(-1, dtype=np.int64)
        dot = k - 2 * pop
        act = dot < 0
    return np.where(act, -1, 1).astype(np.int8)


def save(net: PackedNetwork, path) -> None:
    widths = list(net.layer_widths)
    header = MAGIC + struct.pack(f"<III{len(widths)}I", VERSION, net.convention, net.n_layers, *widths)
    header += b"\0" * (-len(header) % 8)
    with open(path, "wb") as f:
        f.write(header)
        for w in net.words:
            f.write(np.ascontiguousarray(w, dtype="<u8").tobytes())


def load(path) -> PackedNetwork:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise PackedFormatError("not a packed BMNN file (bad magic)")
    if len(data) < 16:
        raise PackedFormatError("truncated header")
    version, convention, n_layers = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise PackedFormatError(f"unsupported version {version}")
    if convention != NEG_IS_ONE:
        raise PackedFormatError(f"unknown bit convention {convention}")
    off = 16
    if len(data) < off + 4 * (n_layers + 1):
        raise PackedFormatError("truncated header")
    widths = struct.unpack_from(f"<{n_layers + 1}I", data, off)
    off += 4 * (n_layers + 1)
    off += -off % 8
    topo = build(widths)
    words = []
    for v, k in topo.shapes:
        n = v * _n_words(k)
        chunk = data[off:off + 8 * n]
        if len(chunk) != 8 * n:
            raise PackedFormatError("truncated weight block")
        words.append(np.frombuffer(chunk, dtype="<u8").reshape(v, _n_words(k)).copy())
        off += 8 * n
    if off != len(data):
        raise PackedFormatError("trailing bytes after last layer")
    return PackedNetwork(topo.layer_widths, topo.fan_in, words, convention)
