"""Architecture descriptors and the two network variants.

The voxel grid enters the 2D convolution stack with its z axis as input
channels: a (B, C, C, C) batch indexed [b, x, y, z] is read as channels-last
images of height x, width y and z channels.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from ..errors import InvalidDescriptor, NonFiniteValue, ShapeMismatch
from .layers import Conv2D, Dense, Flatten, HeadDense, Layer, MaxPool2D, ReLU, Sigmoid, Softmax

BINARY = "binary"
THREE_CLASS = "3class"


@dataclass(frozen=True)
class ArchitectureDescriptor:
    """Layer layout for either variant.

    ``pool_after`` lists the (0-based) conv layers followed by a 2x2 max pool.
    For the binary variant ``dense_widths`` are shared hidden layers before the
    sigmoid output; for the 3-class variant every AU head gets its own copy
    of those hidden layers followed by a 3-way softmax.
    """

    variant: str = BINARY
    input_c: int = 24
    conv_filters: tuple[int, ...] = (32, 32, 64, 64)
    kernel_size: int = 3
    pool_after: tuple[int, ...] = (1, 3)
    dense_widths: tuple[int, ...] = (256, 128)
    au_count: int = 12
    n_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))
        object.__setattr__(self, "pool_after", tuple(int(p) for p in self.pool_after))
        object.__setattr__(self, "dense_widths", tuple(int(w) for w in self.dense_widths))
        self.validate()

    def validate(self):
        if self.variant not in (BINARY, THREE_CLASS):
            raise InvalidDescriptor(f"unknown variant {self.variant!r}")
        if self.input_c < 2:
            raise InvalidDescriptor("input_c must be >= 2")
        if not self.conv_filters or min(self.conv_filters) < 1:
            raise InvalidDescriptor("need at least one conv layer with >= 1 filter")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidDescriptor("kernel_size must be odd and positive")
        if any(p < 0 or p >= len(self.conv_filters) for p in self.pool_after):
            raise InvalidDescriptor("pool_after refers to a missing conv layer")
        if any(w < 1 for w in self.dense_widths):
            raise InvalidDescriptor("dense widths must be positive")
        if self.au_count < 1:
            raise InvalidDescriptor("au_count must be >= 1")
        side = self.input_c
        for _ in self.pool_after:
            side //= 2
        if side < 1:
            raise InvalidDescriptor(f"input_c={self.input_c} too small for {len(self.pool_after)} pools")

    @property
    def flat_features(self) -> int:
        side = self.input_c
        for _ in self.pool_after:
            side //= 2
        return side * side * self.conv_filters[-1]

    def layer_sequence(self) -> list[str]:
        seq = []
        for i in range(len(self.conv_filters)):
            seq.append("conv")
            if i in self.pool_after:
                seq.append("pool")
        seq += ["dense"] * len(self.dense_widths)
        seq.append("output")
        return seq

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("conv_filters", "pool_after", "dense_widths"):
            d[k] = list(d[k])
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ArchitectureDescriptor:
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidDescriptor(str(exc)) from None

    @classmethod
    def from_json(cls, s: str) -> ArchitectureDescriptor:
        return cls.from_dict(json.loads(s))

    def with_overrides(self, **kw) -> ArchitectureDescriptor:
        return replace(self, **kw)


def default_descriptor(variant: str = BINARY, **overrides) -> ArchitectureDescriptor:
    return ArchitectureDescriptor(variant=variant, **overrides)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class Network:
    descriptor: ArchitectureDescriptor
    params: dict[str, np.ndarray]
    seed: int | None = None
    check_finite: bool = False
    layers: list[tuple[str, Layer]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.layers:
            self.layers = _build_layers(self.descriptor, self.params)

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def variant(self) -> str:
        return self.descriptor.variant

    def prepare_input(self, grids: np.ndarray) -> np.ndarray:
        c = self.descriptor.input_c
        g = np.asarray(grids)
        if g.ndim == 3:
            g = g[None]
        if g.shape[1:] != (c, c, c):
            raise ShapeMismatch(f"expected grids of side {c}, got shape {g.shape}")
        return g.astype(self.dtype)

    def forward(self, grids: np.ndarray, train: bool = True) -> np.ndarray:
        """Probabilities: (B, au_count) for binary, (B, au_count, 3) for 3-class.

        With ``train`` the activations needed by :meth:`backward` are cached.
        """
        return self.forward_tensor(self.prepare_input(grids), train)

    def forward_tensor(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        for name, layer in self.layers:
            x = layer.forward(x, train)
            if self.check_finite and not np.all(np.isfinite(x)):
                raise NonFiniteValue(f"non-finite activation after layer {name}")
        return x

    def backward(self, dout: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every parameter given d(loss)/d(output probabilities)."""
        grads = {}
        for name, layer in reversed(self.layers):
            dout = layer.backward(dout)
            for k, g in layer.grads.items():
                grads[f"{name}.{k}"] = g
        return {k: grads[k] for k in self.params}

    def clear_cache(self):
        for _, layer in self.layers:
            layer.clear()

    def predict(self, grids: np.ndarray, batch_size: int = 256) -> np.ndarray:
        outs = [self.forward(grids[i:i + batch_size], train=False) for i in range(0, len(grids), batch_size)]
        return np.concatenate(outs) if outs else np.empty((0,))


def _parameter_shapes(d: ArchitectureDescriptor) -> list[tuple[str, tuple[int, ...], int, int]]:
    """(name, shape, fan_in, fan_out) for every parameter tensor, in order."""
    out = []
    in_ch, k = d.input_c, d.kernel_size
    for i, f in enumerate(d.conv_filters):
        out.append((f"conv{i + 1}.weight", (k, k, in_ch, f), in_ch * k * k, f * k * k))
        out.append((f"conv{i + 1}.bias", (f,), 0, 0))
        in_ch = f
    width = d.flat_features
    if d.variant == BINARY:
        for i, w in enumerate(d.dense_widths):
            out.append((f"dense{i + 1}.weight", (width, w), width, w))
            out.append((f"dense{i + 1}.bias", (w,), 0, 0))
            width = w
        out.append(("output.weight", (width, d.au_count), width, d.au_count))
        out.append(("output.bias", (d.au_count,), 0, 0))
    else:
        a = d.au_count
        for i, w in enumerate(d.dense_widths):
            out.append((f"head{i + 1}.weight", (a, width, w), width, w))
            out.append((f"head{i + 1}.bias", (a, w), 0, 0))
            width = w
        out.append(("output.weight", (a, width, d.n_classes), width, d.n_classes))
        out.append(("output.bias", (a, d.n_classes), 0, 0))
    return out


def parameter_shapes(d: ArchitectureDescriptor) -> dict[str, tuple[int, ...]]:
    return {name: shape for name, shape, _, _ in _parameter_shapes(d)}


def _build_layers(d: ArchitectureDescriptor, p: dict[str, np.ndarray]) -> list[tuple[str, Layer]]:
    expected = parameter_shapes(d)
    if list(p) != list(expected) or any(p[k].shape != s for k, s in expected.items()):
        raise ShapeMismatch("parameters do not match the descriptor")
    layers: list[tuple[str, Layer]] = []
    for i in range(len(d.conv_filters)):
        name = f"conv{i + 1}"
        layers.append((name, Conv2D(p[f"{name}.weight"], p[f"{name}.bias"], input_grad=i > 0,
                                     sparse_input=i == 0)))
        layers.append((f"{name}.relu", ReLU()))
        if i in d.pool_after:
            layers.append((f"{name}.pool", MaxPool2D()))
    layers.append(("flatten", Flatten()))
    dense_cls, prefix = (Dense, "dense") if d.variant == BINARY else (HeadDense, "head")
    for i in range(len(d.dense_widths)):
        name = f"{prefix}{i + 1}"
        layers.append((name, dense_cls(p[f"{name}.weight"], p[f"{name}.bias"])))
        layers.append((f"{name}.relu", ReLU()))
    layers.append(("output", dense_cls(p["output.weight"], p["output.bias"])))
    layers.append(("output.act", Sigmoid() if d.variant == BINARY else Softmax()))
    return layers


def init_network(descriptor: ArchitectureDescriptor, seed: int = 0, dtype=np.float32) -> Network:
    """Glorot-uniform weights, zero biases; bit-identical for equal (descriptor, seed, dtype)."""
    descriptor.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in, fan_out in _parameter_shapes(descriptor):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = _glorot(rng, shape, fan_in, fan_out, dtype)
    return Network(descriptor, params, seed)


def clone_network(net: Network, dtype=None) -> Network:
    dtype = dtype or net.dtype
    return Network(net.descriptor, {k: v.astype(dtype, copy=True) for k, v in net.params.items()}, net.seed)
