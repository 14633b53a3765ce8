"""Parameter and multiply-add accounting, plus receptive-field sizes."""
from __future__ import annotations

from dataclasses import dataclass, field

from .arch import Architecture, resolve


@dataclass
class ComplexityReport:
    names: list[str] = field(default_factory=list)
    multiply_adds: list[int] = field(default_factory=list)
    params: list[int] = field(default_factory=list)

    @property
    def total_multiply_adds(self) -> int:
        return sum(self.multiply_adds)

    @property
    def total_params(self) -> int:
        return sum(self.params)

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"name": n, "multiply_adds": m, "params": p}
                for n, m, p in zip(self.names, self.multiply_adds, self.params)
            ],
            "total_multiply_adds": self.total_multiply_adds,
            "total_params": self.total_params,
        }


def _prod(shape) -> int:
    out = 1
    for v in shape:
        out *= v
    return out


def count_complexity(arch: Architecture) -> ComplexityReport:
    """Per-layer multiply-adds and learnable parameter counts.

    A conv costs ``C_in * C_out * K^2`` per output position.  Bias adds,
    batchnorm and activations are free; dense layers cost ``D * K``.
    Residual adapters appear as their own ``.adapter`` rows.
    """
    report = ComplexityReport()
    for layer in resolve(arch):
        spec = layer.spec
        name = f"{layer.index}:{spec.kind}"
        if spec.kind == "conv":
            c_out, ho, wo = layer.out_shape
            per_pos = layer.in_channels * c_out * spec.kernel * spec.kernel
            report.names.append(name)
            report.multiply_adds.append(per_pos * ho * wo)
            report.params.append(per_pos)
        elif spec.kind == "bn":
            report.names.append(name)
            report.multiply_adds.append(0)
            report.params.append(2 * layer.out_channels)
        elif spec.kind == "dense":
            d = _prod(layer.in_shape)
            report.names.append(name)
            report.multiply_adds.append(d * spec.channels)
            report.params.append(d * spec.channels + spec.channels)
        elif spec.kind == "residual-add" and layer.adapter is not None:
            a = layer.adapter
            _, ho, wo = layer.out_shape
            report.names.append(name + ".adapter")
            report.multiply_adds.append(a.in_channels * a.out_channels * ho * wo)
            report.params.append(a.in_channels * a.out_channels + 2 * a.out_channels)
    return report


def count_multiply_adds(arch: Architecture) -> ComplexityReport:
    return count_complexity(arch)


def count_params(arch: Architecture) -> int:
    return count_complexity(arch).total_params


def receptive_field_of(kernels, strides) -> int:
    """``sum_p (prod_{q<p} stride_q) * (kernel_p - 1)`` over a layer stack.

    This is the conventional receptive-field size minus one: two stacked
    3×3 stride-1 convs give 4.
    """
    total = 0
    jump = 1
    for k, s in zip(kernels, strides):
        total += jump * (k - 1)
        jump *= s
    return total


def _rf_stack(arch: Architecture, upto: int) -> tuple[list[int], list[int]]:
    kernels, strides = [], []
    for layer in resolve(arch)[: upto + 1]:
        spec = layer.spec
        if spec.kind == "conv" or (spec.kind == "pool" and spec.op == "max"):
            kernels.append(spec.kernel)
            strides.append(spec.stride)
        elif spec.kind == "pool":
            # global pooling: one window spanning the whole map
            kernels.append(layer.in_shape[1])
            strides.append(layer.in_shape[1])
    return kernels, strides


def receptive_field(arch: Architecture, layer_index: int) -> int:
    """Receptive-field size after layer ``layer_index`` (convs and pools contribute)."""
    return receptive_field_of(*_rf_stack(arch, layer_index))


def conv_receptive_fields(arch: Architecture) -> dict[int, int]:
    """Receptive field of every conv, keyed by 1-based conv ordinal."""
    out = {}
    total, jump = 0, 1
    conv_ordinal = 0
    for layer in resolve(arch):
        spec = layer.spec
        if spec.kind == "conv" or (spec.kind == "pool" and spec.op == "max"):
            total += jump * (spec.kernel - 1)
            jump *= spec.stride
            if spec.kind == "conv":
                conv_ordinal += 1
                out[conv_ordinal] = total
    return out
