"""Layer specifications, shape propagation and JSON round trip.

An :class:`Architecture` is a flat, ordered list of :class:`LayerSpec`.  Each
layer consumes the previous layer's output; a ``residual-add`` layer also
adds the output of ``residual_source`` (``-1`` is the network input).  When
the two operands differ in channels or spatial size a 1×1 strided conv + bn
adapter is applied to the source.  Adapters are real layers for parameter
and multiply-add accounting but do not count toward the network's depth.

JSON schema (one file per architecture)::

    {
      "name": "26--",
      "input_shape": [1, 28, 28],          # C, H, W
      "layers": [
        {"kind": "conv", "channels": 16, "kernel": 3, "stride": 1, "pad": 1},
        {"kind": "bn"},
        {"kind": "act", "op": "relu"},      # or {"op": "leaky", "slope": 0.1}
        {"kind": "pool", "op": "max", "kernel": 2, "stride": 2},
        {"kind": "residual-add", "residual_source": 2},
        {"kind": "pool", "op": "global-avg"},
        {"kind": "dense", "channels": 10}
      ]
    }
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..errors import ConfigError, ShapeError

KINDS = ("conv", "bn", "act", "pool", "dense", "residual-add")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: Optional[int] = None
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    residual_source: Optional[int] = None
    op: Optional[str] = None
    slope: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("conv", "dense") and (self.channels is None or self.channels < 1):
            raise ConfigError(f"{self.kind} layer needs a positive channel count, got {self.channels}")
        if self.stride < 1 or self.pad < 0 or self.kernel < 0:
            raise ConfigError(f"invalid kernel/stride/pad {self.kernel}/{self.stride}/{self.pad}")
        if self.kind == "residual-add" and self.residual_source is None:
            raise ConfigError("residual-add layer needs residual_source")
        if self.kind == "pool" and self.op not in ("max", "global-avg"):
            raise ConfigError(f"pool op must be 'max' or 'global-avg', got {self.op!r}")
        if self.kind == "act" and self.op not in (None, "relu", "leaky"):
            raise ConfigError(f"act op must be 'relu' or 'leaky', got {self.op!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for key, default in (("channels", None), ("kernel", 1), ("stride", 1), ("pad", 0),
                             ("residual_source", None), ("op", None), ("slope", 0.0)):
            value = getattr(self, key)
            if value != default:
                d[key] = value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown layer fields {sorted(unknown)}")
        return cls(**d)


def conv(channels: int, kernel: int = 3, stride: int = 1, pad: Optional[int] = None) -> LayerSpec:
    return LayerSpec("conv", channels=channels, kernel=kernel, stride=stride,
                     pad=kernel // 2 if pad is None else pad)


def bn() -> LayerSpec:
    return LayerSpec("bn")


def act(op: str = "relu", slope: float = 0.0) -> LayerSpec:
    return LayerSpec("act", op=op, slope=slope)


def maxpool(kernel: int = 2, stride: Optional[int] = None, pad: int = 0) -> LayerSpec:
    return LayerSpec("pool", op="max", kernel=kernel, stride=stride or kernel, pad=pad)


def global_avgpool() -> LayerSpec:
    return LayerSpec("pool", op="global-avg", kernel=0)


def dense(classes: int) -> LayerSpec:
    return LayerSpec("dense", channels=classes)


def residual_add(source: int) -> LayerSpec:
    return LayerSpec("residual-add", residual_source=source)


@dataclass(frozen=True)
class Adapter:
    """1×1 conv (+ bn) that reshapes a residual source onto the add target."""

    in_channels: int
    out_channels: int
    stride: int


@dataclass(frozen=True)
class ResolvedLayer:
    index: int
    spec: LayerSpec
    in_shape: tuple  # (C, H, W) or (D,)
    out_shape: tuple
    adapter: Optional[Adapter] = None

    @property
    def in_channels(self) -> int:
        return self.in_shape[0]

    @property
    def out_channels(self) -> int:
        return self.out_shape[0]


@dataclass(frozen=True)
class Architecture:
    name: str
    input_shape: tuple
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W) with positive extents, got {self.input_shape}")

    def resolve(self) -> list[ResolvedLayer]:
        return resolve(self)

    def conv_indices(self) -> list[int]:
        """Layer indices of the main-path convolutions; conv ordinal k is entry k-1."""
        return [i for i, layer in enumerate(self.layers) if layer.kind == "conv"]

    def depth(self) -> int:
        """Number of main-path conv layers; residual adapters are not counted."""
        return len(self.conv_indices())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        unknown = set(d) - {"name", "input_shape", "layers"}
        if unknown:
            raise ConfigError(f"unknown architecture fields {sorted(unknown)}")
        try:
            return cls(d["name"], tuple(d["input_shape"]), tuple(LayerSpec.from_dict(x) for x in d["layers"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed architecture document: {exc}") from exc


def resolve(arch: Architecture) -> list[ResolvedLayer]:
    """Propagate shapes through ``arch``; raise on any inconsistency."""
    shape: tuple = arch.input_shape
    outputs: list[tuple] = []
    resolved: list[ResolvedLayer] = []
    for idx, spec in enumerate(arch.layers):
        in_shape = shape
        adapter = None
        if spec.kind == "conv":
            if len(shape) != 3:
                raise ShapeError(f"layer {idx}: conv needs a C×H×W input, got {shape}")
            c, h, w = shape
            ho = (h + 2 * spec.pad - spec.kernel) // spec.stride + 1
            wo = (w + 2 * spec.pad - spec.kernel) // spec.stride + 1
            if ho <= 0 or wo <= 0 or spec.kernel < 1:
                raise ConfigError(f"layer {idx}: conv k={spec.kernel} s={spec.stride} p={spec.pad} empties {h}x{w} input")
            shape = (spec.channels, ho, wo)
        elif spec.kind in ("bn", "act"):
            pass
        elif spec.kind == "pool":
            if len(shape) != 3:
                raise ShapeError(f"layer {idx}: pool needs a C×H×W input, got {shape}")
            c, h, w = shape
            if spec.op == "global-avg":
                shape = (c,)
            else:
                if spec.kernel > h + 2 * spec.pad or spec.kernel > w + 2 * spec.pad:
                    raise ConfigError(f"layer {idx}: pool window {spec.kernel} larger than padded {h}x{w} input")
                shape = (c, (h + 2 * spec.pad - spec.kernel) // spec.stride + 1,
                         (w + 2 * spec.pad - spec.kernel) // spec.stride + 1)
        elif spec.kind == "dense":
            shape = (spec.channels,)
        elif spec.kind == "residual-add":
            src = spec.residual_source
            if not -1 <= src < idx:
                raise ConfigError(f"layer {idx}: residual_source {src} must reference an earlier layer")
            src_shape = arch.input_shape if src == -1 else outputs[src]
            if src_shape != shape:
                if len(src_shape) != 3 or len(shape) != 3:
                    raise ShapeError(f"layer {idx}: cannot adapt residual {src_shape} onto {shape}")
                stride = src_shape[1] // shape[1]
                if stride < 1 or (src_shape[1] - 1) // stride + 1 != shape[1] or (src_shape[2] - 1) // stride + 1 != shape[2]:
                    raise ShapeError(f"layer {idx}: residual source {src_shape} cannot be strided onto {shape}")
                adapter = Adapter(src_shape[0], shape[0], stride)
        resolved.append(ResolvedLayer(idx, spec, in_shape, shape, adapter))
        outputs.append(shape)
    return resolved


def conv_taps(arch: Architecture) -> dict[int, int]:
    """Map conv ordinal (1-based) to the layer index whose output is that conv's tap.

    The tap is the pre-activation result of the conv: the conv itself, then
    any directly following bn and residual-add layers.  Teacher knowledge
    features and student injection features are read at the tap.
    """
    taps = {}
    layers = arch.layers
    for ordinal, ci in enumerate(arch.conv_indices(), start=1):
        t = ci
        while t + 1 < len(layers) and layers[t + 1].kind in ("bn", "residual-add"):
            t += 1
        taps[ordinal] = t
    return taps


def save_arch(arch: Architecture, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(arch.to_dict(), indent=2) + "\n")
    os.replace(tmp, path)


def load_arch(path) -> Architecture:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return Architecture.from_dict(doc)


def arch_to_json(arch: Architecture) -> str:
    return json.dumps(arch.to_dict(), sort_keys=True)


__all__ = [
    "Adapter",
    "Architecture",
    "LayerSpec",
    "ResolvedLayer",
    "act",
    "arch_to_json",
    "bn",
    "conv",
    "conv_taps",
    "dense",
    "global_avgpool",
    "load_arch",
    "maxpool",
    "residual_add",
    "resolve",
    "save_arch",
]
