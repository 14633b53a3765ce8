"""Slim residual student presets ("50" down to "26--") and a small plain teacher.

Every preset is: 3×3/16 stem, three residual stages, a closing 3×3 conv,
global average pooling and a dense classifier.  Stages are built from
two-conv basic blocks; the first conv of stages one and three has stride 2.
A preset named ``"N-"`` has ``N`` main-path convs (``1 + 3 * depth + 1``).
"""
from __future__ import annotations

from ..errors import ConfigError
from .arch import Architecture, act, bn, conv, dense, global_avgpool, maxpool, residual_add

# name -> (stem, stage1 /s2, stage2 /s1, stage3 /s2, final conv, convs per stage)
LAYOUTS = {
    "50": (16, 32, 64, 128, 256, 16),
    "50-": (16, 32, 32, 64, 128, 16),
    "50--": (16, 16, 32, 48, 96, 16),
    "44-": (16, 32, 32, 64, 128, 14),
    "44--": (16, 16, 32, 48, 96, 14),
    "38-": (16, 32, 32, 64, 128, 12),
    "38--": (16, 16, 32, 48, 96, 12),
    "32-": (16, 32, 32, 64, 128, 10),
    "32--": (16, 16, 32, 48, 96, 10),
    "26-": (16, 32, 32, 64, 128, 8),
    "26--": (16, 16, 32, 48, 96, 8),
}

PRESET_NAMES = tuple(LAYOUTS)


def residual_net(
    name: str,
    stem: int,
    stages: list[tuple[int, int, int]],
    final: int,
    input_shape=(1, 28, 28),
    num_classes: int = 10,
    activation: str = "relu",
) -> Architecture:
    """Stem conv, then ``(channels, stride, n_convs)`` stages of basic blocks."""
    layers = [conv(stem, 3, 1), bn(), act(activation)]
    source = len(layers) - 1
    for channels, stride, n_convs in stages:
        if n_convs % 2:
            raise ConfigError(f"stage conv count must be even (two per block), got {n_convs}")
        for b in range(n_convs // 2):
            layers += [
                conv(channels, 3, stride if b == 0 else 1), bn(), act(activation),
                conv(channels, 3, 1), bn(), residual_add(source), act(activation),
            ]
            source = len(layers) - 1
    layers += [conv(final, 3, 1), bn(), act(activation), global_avgpool(), dense(num_classes)]
    return Architecture(name, input_shape, tuple(layers))


def preset(name: str, input_shape=(1, 28, 28), num_classes: int = 10) -> Architecture:
    try:
        stem, c1, c2, c3, final, n = LAYOUTS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; known presets: {', '.join(PRESET_NAMES)}") from None
    return residual_net(name, stem, [(c1, 2, n), (c2, 1, n), (c3, 2, n)], final, input_shape, num_classes)


def small_cnn(
    widths=(16, 16, 32, 32, 64),
    input_shape=(1, 28, 28),
    num_classes: int = 10,
    name: str = "small-cnn",
) -> Architecture:
    """Plain conv net used as the desk-scale teacher.

    Two convs at full resolution, 2×2 max pool, two convs, pool, one conv,
    then global average pooling and a dense head.
    """
    a, b, c, d, e = widths
    layers = [
        conv(a), bn(), act(), conv(b), bn(), act(), maxpool(2),
        conv(c), bn(), act(), conv(d), bn(), act(), maxpool(2),
        conv(e), bn(), act(), global_avgpool(), dense(num_classes),
    ]
    return Architecture(name, input_shape, tuple(layers))
