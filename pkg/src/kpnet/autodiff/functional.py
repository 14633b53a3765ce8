"""Differentiable ops over NCHW tensors.

Every op returns a fresh tensor and leaves its inputs untouched.  The one
exception is :func:`batchnorm` in training mode, which updates the running
statistics arrays passed in ``state`` in place.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import ConfigError, DataError, ShapeError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    dtype = (ta or tb).dtype
    if ta is None:
        ta = Tensor(np.asarray(a, dtype=dtype))
    if tb is None:
        tb = Tensor(np.asarray(b, dtype=dtype))
    return ta, tb


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), back)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    # subgradient of |.| at 0 is taken as 0
    def back(g):
        return (g * np.sign(x.data),)

    return make_result(np.abs(x.data), (x,), back)


def sum(x: Tensor) -> Tensor:  # noqa: A001
    def back(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), back)


def mean(x: Tensor) -> Tensor:
    count = x.data.size

    def back(g):
        return (np.full(x.shape, g / count, dtype=x.dtype),)

    return make_result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), back)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    def back(g):
        return (g.reshape(x.shape),)

    return make_result(x.data.reshape(shape), (x,), back)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


# activations


def leaky_relu(x: Tensor, slope: float) -> Tensor:
    """Elementwise ``max(x, slope * x)`` for ``slope`` in [0, 1]."""
    s = x.dtype.type(slope)
    pos = x.data > 0
    if slope == 0:
        out = x.data * pos

        def back(g):
            return (g * pos,)
    else:
        out = np.where(pos, x.data, s * x.data)

        def back(g):
            return (np.where(pos, g, s * g),)

    return make_result(out, (x,), back)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


# convolution


def conv_output_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patches of a channels-last padded input as rows ordered (kh, kw, c)."""
    n, _, _, c = xp.shape
    sn, sh, sw, sc = xp.strides
    view = as_strided(
        xp,
        shape=(n, ho, wo, kh, kw, c),
        strides=(sn, sh * stride, sw * stride, sh, sw, sc),
        writeable=False,
    )
    return view.reshape(n * ho * wo, kh * kw * c)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation without bias.

    ``x`` is N×C×H×W, ``weight`` is O×C×Kh×Kw.  Output spatial extents are
    ``(H + 2*pad - Kh) // stride + 1`` (same for W).
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if c != wc:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {wc} (weight {weight.shape})")
    if stride < 1 or pad < 0:
        raise ConfigError(f"conv2d: stride must be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ConfigError(
            f"conv2d: kernel {kh}x{kw} with stride {stride}, pad {pad} gives empty output on {h}x{w} input"
        )

    # work channels-last so every kernel offset is a contiguous run of channels
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(o, -1)
    pointwise = kh == 1 and kw == 1 and pad == 0
    if pointwise:
        cols = x.data[:, :, ::stride, ::stride].transpose(0, 2, 3, 1).reshape(-1, c)
    else:
        xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
        xp[:, pad : pad + h, pad : pad + w, :] = x.data.transpose(0, 2, 3, 1)
        cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            if pointwise:
                gx = np.zeros(x.shape, dtype=x.dtype)
                gx[:, :, : stride * ho : stride, : stride * wo : stride] = (g2 @ wmat).reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
            elif stride == 1 and pad < kh and pad < kw:
                # stride 1: the input gradient is a full correlation of g with the flipped kernel
                ph, pw = kh - 1 - pad, kw - 1 - pad
                gp = np.zeros((n, ho + 2 * ph, wo + 2 * pw, o), dtype=g.dtype)
                gp[:, ph : ph + ho, pw : pw + wo, :] = g.transpose(0, 2, 3, 1)
                wflip = weight.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(kh * kw * o, c)
                gx = (_im2col(gp, kh, kw, 1, h, w) @ wflip).reshape(n, h, w, c).transpose(0, 3, 1, 2)
            else:
                dcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, c)
                gxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=x.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
                gx = gxp[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2)
        return gx, gw

    return make_result(np.ascontiguousarray(out), (x, weight), back)


# normalization


class BatchNormState:
    """Running mean/variance for one batchnorm layer (mutated in train mode)."""

    __slots__ = ("running_mean", "running_var", "momentum")

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over N×C×H×W (or N×C) input.

    Training mode normalizes with batch statistics and updates ``state`` in
    place; eval mode uses the running statistics.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects 2-D or 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},), got {gamma.shape}, {beta.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    dt = x.dtype.type
    eps = dt(eps)

    if training:
        m = x.data.size // c
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        mom = dt(state.momentum)
        state.running_mean *= 1 - mom
        state.running_mean += mom * mu.astype(state.running_mean.dtype)
        unbiased = var * (dt(m) / dt(m - 1)) if m > 1 else var
        state.running_var *= 1 - mom
        state.running_var += mom * unbiased.astype(state.running_var.dtype)
    else:
        m = None
        mu = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)

    inv_std = (1 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def back(g):
        ggamma = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gbeta = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data.reshape(bshape)
            if training:
                s1 = gxhat.sum(axis=axes).reshape(bshape)
                s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = (inv_std.reshape(bshape) / dt(m)) * (dt(m) * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv_std.reshape(bshape)
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), back)


# pooling


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None, pad: int = 0) -> Tensor:
    stride = kernel if stride is None else stride
    n, c, h, w = x.shape
    if kernel > h + 2 * pad or kernel > w + 2 * pad:
        raise ConfigError(f"maxpool2d: window {kernel} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    ho = conv_output_size(h, kernel, stride, pad)
    wo = conv_output_size(w, kernel, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf) if pad else x.data
    sn, sc, sh, sw = xp.strides
    win = as_strided(
        xp, shape=(n, c, ho, wo, kernel, kernel), strides=(sn, sc, sh * stride, sw * stride, sh, sw), writeable=False
    ).reshape(n, c, ho, wo, kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        for idx in range(kernel * kernel):
            i, j = divmod(idx, kernel)
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.where(arg == idx, g, 0)
        return (gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp,)

    return make_result(np.ascontiguousarray(out), (x,), back)


def global_avgpool(x: Tensor) -> Tensor:
    """N×C×H×W -> N×C spatial mean."""
    n, c, h, w = x.shape
    area = x.dtype.type(h * w)

    def back(g):
        return (np.broadcast_to((g / area)[:, :, None, None], x.shape).copy(),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), back)


# classifier head and loss


def dense(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map ``x @ weight + bias`` for x of shape N×D, weight D×K."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot apply weight {weight.shape} to input {x.shape}")
    out = x.data @ weight.data
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"dense: bias shape {bias.shape} does not match {weight.shape[1]} outputs")
        out = out + bias.data
        parents.append(bias)

    def back(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result(out, parents, back)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.int64)
    logp = log_softmax(logits.data)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / logits.dtype.type(n)),)

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), back)


def stop_gradient(x) -> Tensor:
    return as_tensor(x).detach()
