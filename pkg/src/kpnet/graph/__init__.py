"""Architecture descriptions, bottleneck blocks, complexity and receptive fields."""
from .arch import (
    Adapter,
    Architecture,
    LayerSpec,
    ResolvedLayer,
    conv_taps,
    load_arch,
    resolve,
    save_arch,
)
from .blocks import BottleneckSpec, bottleneck_arch, bottleneck_cost, build_bottleneck, reduction_ratio, standard_cost
from .complexity import (
    ComplexityReport,
    conv_receptive_fields,
    count_complexity,
    count_multiply_adds,
    count_params,
    receptive_field,
    receptive_field_of,
)
from .presets import PRESET_NAMES, preset, residual_net, small_cnn

__all__ = [
    "Adapter",
    "Architecture",
    "BottleneckSpec",
    "ComplexityReport",
    "LayerSpec",
    "PRESET_NAMES",
    "ResolvedLayer",
    "bottleneck_arch",
    "bottleneck_cost",
    "build_bottleneck",
    "conv_receptive_fields",
    "conv_taps",
    "count_complexity",
    "count_multiply_adds",
    "count_params",
    "load_arch",
    "preset",
    "receptive_field",
    "receptive_field_of",
    "reduction_ratio",
    "residual_net",
    "resolve",
    "save_arch",
    "small_cnn",
    "standard_cost",
]
