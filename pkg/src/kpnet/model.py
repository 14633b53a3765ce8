"""Runtime network: parameters for an :class:`Architecture` and its forward pass."""
from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

from .autodiff import BatchNormState, Parameter, Tensor, no_grad
from .autodiff import functional as F
from .errors import ShapeError
from .graph.arch import Architecture, resolve


def _uniform(rng: np.random.Generator, shape, fan_in: int, gain: float, dtype) -> np.ndarray:
    bound = gain * np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Network:
    """Parameters and forward pass for one architecture.

    Conv weights are drawn uniformly with a fan-in scaled bound
    (``sqrt(6 / fan_in)``), dense weights with ``1 / sqrt(fan_in)``; batchnorm
    starts at gamma=1, beta=0.  Parameter names are ``"<layer>.<role>.<field>"``.
    """

    def __init__(
        self,
        arch: Architecture,
        seed: int | np.random.Generator = 0,
        dtype=np.float32,
        weight_decay: float = 1e-4,
    ):
        self.arch = arch
        self.layers = resolve(arch)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        self._sources = {l.spec.residual_source for l in self.layers if l.spec.kind == "residual-add"}
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

        for layer in self.layers:
            i, spec = layer.index, layer.spec
            if spec.kind == "conv":
                c_in = layer.in_channels
                shape = (spec.channels, c_in, spec.kernel, spec.kernel)
                self._add(f"{i}.conv.weight", _uniform(rng, shape, c_in * spec.kernel**2, np.sqrt(6), dtype), weight_decay)
            elif spec.kind == "bn":
                self._add_bn(f"{i}.bn", layer.out_channels, weight_decay)
            elif spec.kind == "dense":
                d = int(np.prod(layer.in_shape))
                self._add(f"{i}.dense.weight", _uniform(rng, (d, spec.channels), d, 1.0, dtype), weight_decay)
                self._add(f"{i}.dense.bias", np.zeros(spec.channels, dtype), weight_decay)
            elif spec.kind == "residual-add" and layer.adapter is not None:
                a = layer.adapter
                shape = (a.out_channels, a.in_channels, 1, 1)
                self._add(f"{i}.adapter.weight", _uniform(rng, shape, a.in_channels, np.sqrt(6), dtype), weight_decay)
                self._add_bn(f"{i}.adapter_bn", a.out_channels, weight_decay)

    def _add(self, name: str, value: np.ndarray, weight_decay: float) -> None:
        self.params[name] = Parameter(value, weight_decay=weight_decay, name=name)

    def _add_bn(self, prefix: str, channels: int, weight_decay: float) -> None:
        self._add(f"{prefix}.gamma", np.ones(channels, self.dtype), weight_decay)
        self._add(f"{prefix}.beta", np.zeros(channels, self.dtype), weight_decay)
        self.bn_states[prefix] = BatchNormState(channels, self.dtype)

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def freeze(self) -> "Network":
        for p in self.params.values():
            p.freeze()
        return self

    def _bn(self, x: Tensor, prefix: str, training: bool) -> Tensor:
        p = self.params
        return F.batchnorm(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"], self.bn_states[prefix], training)

    def forward(
        self,
        x,
        training: bool,
        capture: Iterable[int] = (),
        replace: Optional[tuple[int, Tensor]] = None,
        stop_after: Optional[int] = None,
    ) -> tuple[Optional[Tensor], dict[int, Tensor]]:
        """Run the network and return ``(output, captured)``.

        ``capture`` lists layer indices whose outputs are returned.
        ``replace=(k, t)`` substitutes ``t`` for the output of layer ``k``; every
        activation computed before the cut is detached, so the layers after
        ``k`` receive no gradient path back into the layers before it.  The
        captured value at ``k`` is the original, pre-replacement output.
        With ``stop_after`` the pass ends there and the output is ``None``.
        """
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if tuple(h.shape[1:]) != self.arch.input_shape:
            raise ShapeError(f"{self.arch.name}: expected input N×{self.arch.input_shape}, got {h.shape}")
        capture = set(capture)
        captured: dict[int, Tensor] = {}
        saved: dict[int, Tensor] = {-1: h} if -1 in self._sources else {}
        p = self.params

        for layer in self.layers:
            i, spec = layer.index, layer.spec
            if spec.kind == "conv":
                h = F.conv2d(h, p[f"{i}.conv.weight"], spec.stride, spec.pad)
            elif spec.kind == "bn":
                h = self._bn(h, f"{i}.bn", training)
            elif spec.kind == "act":
                h = F.leaky_relu(h, spec.slope if spec.op == "leaky" else 0.0)
            elif spec.kind == "pool":
                h = F.global_avgpool(h) if spec.op == "global-avg" else F.maxpool2d(h, spec.kernel, spec.stride, spec.pad)
            elif spec.kind == "dense":
                if h.ndim != 2:
                    h = F.flatten(h)
                h = F.dense(h, p[f"{i}.dense.weight"], p[f"{i}.dense.bias"])
            elif spec.kind == "residual-add":
                src = saved[spec.residual_source]
                if layer.adapter is not None:
                    src = F.conv2d(src, p[f"{i}.adapter.weight"], layer.adapter.stride, 0)
                    src = self._bn(src, f"{i}.adapter_bn", training)
                h = F.add(h, src)

            if i in capture:
                captured[i] = h
            if replace is not None and i == replace[0]:
                h = replace[1]
                saved = {k: v.detach() for k, v in saved.items()}
            if i in self._sources:
                saved[i] = h
            if stop_after is not None and i >= stop_after:
                return None, captured
        return h, captured

    def __call__(self, x, training: bool = False) -> Tensor:
        return self.forward(x, training)[0]

    def logits(self, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Eval-mode logits for a whole array, computed without a graph."""
        out = []
        with no_grad():
            for start in range(0, len(images), batch_size):
                out.append(self.forward(images[start : start + batch_size], training=False)[0].data)
        return np.concatenate(out) if out else np.zeros((0, self.layers[-1].out_shape[0]), self.dtype)

    def accuracy(self, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
        if len(labels) == 0:
            return float("nan")
        return float((self.logits(images, batch_size).argmax(axis=1) == labels).mean())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.params.items()}
        for prefix, st in self.bn_states.items():
            state[f"{prefix}.running_mean"] = st.running_mean.copy()
            state[f"{prefix}.running_var"] = st.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = set(self.state_dict())
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, p in self.params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data[...] = state[name]
        for prefix, st in self.bn_states.items():
            st.running_mean[...] = state[f"{prefix}.running_mean"]
            st.running_var[...] = state[f"{prefix}.running_var"]

    def copy(self) -> "Network":
        clone = Network(self.arch, 0, self.dtype)
        clone.load_state_dict(self.state_dict())
        for name, p in self.params.items():
            clone.params[name].weight_decay = p.weight_decay
            if not p.learnable:
                clone.params[name].freeze()
        return clone

    def checksum(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, arr in sorted(self.state_dict().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()
