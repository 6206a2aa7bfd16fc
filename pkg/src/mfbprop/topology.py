"""Converging (fan-out 1) network architectures.

Layer 1 is fully connected to the input. Every deeper neuron reads a
contiguous, non-overlapping block of the previous layer, so each hidden
neuron feeds exactly one neuron above it.

Indices passed to and returned from the public methods are 1-based.
"""
from __future__ import annotations

from dataclasses import dataclass


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class ConvergingTopology:
    layer_widths: tuple[int, ...]
    fan_in: tuple[int, ...]

    @property
    def n_layers(self) -> int:
        return len(self.fan_in)

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def output_dim(self) -> int:
        return self.layer_widths[-1]

    def layer_shape(self, l: int) -> tuple[int, int]:
        """(V_l, K_l): the storage shape of layer ``l`` weights."""
        self._check_layer(l)
        return self.layer_widths[l], self.fan_in[l - 1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [self.layer_shape(l) for l in range(1, self.n_layers + 1)]

    @property
    def n_weights(self) -> int:
        return sum(v * k for v, k in self.shapes)

    def fan_in_set(self, i: int, l: int) -> range:
        """Indices in layer l-1 read by neuron ``i`` of layer ``l``."""
        self._check_layer(l)
        if not 1 <= i <= self.layer_widths[l]:
            raise TopologyError(f"neuron {i} out of range for layer {l}")
        if l == 1:
            return range(1, self.layer_widths[0] + 1)
        k = self.fan_in[l - 1]
        return range((i - 1) * k + 1, i * k + 1)

    def child(self, j: int, l: int) -> int:
        """Index of the neuron in layer l+1 that neuron ``j`` of layer ``l`` feeds."""
        if not 1 <= l < self.n_layers:
            raise TopologyError(f"layer {l} has no child layer")
        if not 1 <= j <= self.layer_widths[l]:
            raise TopologyError(f"neuron {j} out of range for layer {l}")
        k = self.fan_in[l]
        return -(-j // k)

    def _check_layer(self, l: int) -> None:
        if not 1 <= l <= self.n_layers:
            raise TopologyError(f"layer {l} out of range 1..{self.n_layers}")

    def __str__(self) -> str:
        return "x".join(str(v) for v in self.layer_widths)


def build(layer_widths) -> ConvergingTopology:
    widths = tuple(int(v) for v in layer_widths)
    if len(widths) < 2:
        raise TopologyError("need at least an input and one neuron layer")
    if any(v < 1 for v in widths):
        raise TopologyError(f"layer widths must be positive: {widths}")
    fan_in = [widths[0]]
    for l in range(2, len(widths)):
        prev, cur = widths[l - 1], widths[l]
        if prev % cur:
            raise TopologyError(
                f"layer {l - 1} width {prev} is not divisible by layer {l} width {cur}"
            )
        fan_in.append(prev // cur)
    return ConvergingTopology(widths, tuple(fan_in))


def parse_arch(text: str) -> ConvergingTopology:
    """Parse the ``"785x3010x10"`` architecture form."""
    try:
        widths = [int(part) for part in text.lower().split("x")]
    except ValueError:
        raise TopologyError(f"bad architecture string {text!r}") from None
    return build(widths)
