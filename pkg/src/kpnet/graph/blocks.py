"""Squeeze-then-expand bottleneck blocks and their cost ratios."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from ..errors import ConfigError
from .arch import Architecture, LayerSpec, act, bn, conv


@dataclass(frozen=True)
class BottleneckSpec:
    """Type A is 1×1 (C->X) then K×K (X->C'); type B adds a closing 1×1.

    ``X`` is the squeezed width; ``X / C`` is the block's width multiplier.
    """

    variant: str
    C: int
    X: int
    C_out: int
    K: int = 3

    def __post_init__(self):
        if self.variant not in ("A", "B"):
            raise ConfigError(f"bottleneck variant must be 'A' or 'B', got {self.variant!r}")
        if self.X > self.C:
            raise ConfigError(f"invalid squeeze: X={self.X} exceeds input channels C={self.C}")
        if self.X < 1 or self.K < 1:
            raise ConfigError(f"bottleneck needs X >= 1 and K >= 1, got X={self.X}, K={self.K}")
        if not self.C <= self.C_out <= 2 * self.C:
            raise ConfigError(f"output channels {self.C_out} outside [C, 2C] = [{self.C}, {2 * self.C}]")

    @property
    def width_multiplier(self) -> Fraction:
        return Fraction(self.X, self.C)


def build_bottleneck(spec: BottleneckSpec, stride: int = 1, activation: str = "relu") -> list[LayerSpec]:
    """Layer sequence for one block; each conv is followed by bn + activation.

    The stride sits on the K×K conv so the block covers the same spatial
    extent and receptive field as a single K×K conv with that stride.  The
    1×1 squeeze is emitted even when X == C.
    """
    layers = [conv(spec.X, 1), bn(), act(activation)]
    if spec.variant == "A":
        layers += [conv(spec.C_out, spec.K, stride), bn(), act(activation)]
    else:
        layers += [conv(spec.X, spec.K, stride), bn(), act(activation)]
        layers += [conv(spec.C_out, 1), bn(), act(activation)]
    return layers


def bottleneck_arch(spec: BottleneckSpec, height: int, width: int) -> Architecture:
    return Architecture(f"bottleneck-{spec.variant}", (spec.C, height, width), tuple(build_bottleneck(spec)))


def standard_cost(C: int, C_out: int, K: int, H: int, W: int) -> int:
    return C * H * W * C_out * K * K


def bottleneck_cost(spec: BottleneckSpec, H: int, W: int) -> int:
    """Closed-form multiply-adds of a stride-1 block on an H×W map."""
    C, X, Co, K = spec.C, spec.X, spec.C_out, spec.K
    if spec.variant == "A":
        return C * H * W * X + X * H * W * Co * K * K
    return C * H * W * X + X * X * H * W * K * K + X * H * W * Co


def reduction_ratio(spec: BottleneckSpec) -> tuple[Fraction, Fraction]:
    """(exact, approximate) cost of the block relative to a standard K×K conv.

    The exact ratio is independent of H and W.  The approximation keeps the
    dominant term: X/C for type A, X²/(C·C') for type B.
    """
    C, X, Co, K = spec.C, spec.X, spec.C_out, spec.K
    exact = Fraction(bottleneck_cost(spec, 1, 1), standard_cost(C, Co, K, 1, 1))
    approx = Fraction(X, C) if spec.variant == "A" else Fraction(X * X, C * Co)
    return exact, approx
