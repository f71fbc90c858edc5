"""Central finite-difference checks for single layers and whole networks (float64)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layers import Conv2D, Dense, HeadDense, Layer, MaxPool2D, ReLU, Sigmoid, Softmax
from .losses import binary_cross_entropy, categorical_cross_entropy
from .network import BINARY, ArchitectureDescriptor, init_network

STEP = 1e-5
# below this magnitude gradients are compared absolutely
FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = FLOOR) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = STEP,
                     entries: np.ndarray | None = None) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place.

    With ``entries`` only those flat indices are evaluated; the rest stay 0.
    """
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in (range(flat.size) if entries is None else entries):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    per_tensor: dict[str, float]

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def check_layer(layer: Layer, x: np.ndarray, seed: int = 0, name: str | None = None) -> CheckResult:
    """Compare a layer's backward pass with finite differences of sum(r * layer(x))."""
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    out = layer.forward(x, train=True)
    r = rng.standard_normal(out.shape)
    dx = layer.backward(r)
    analytic = {"input": dx, **{k: layer.grads[k] for k in layer.params}}

    def f():
        return float(np.sum(r * layer.forward(x, train=False)))

    errs = {"input": relative_error(dx, numeric_gradient(f, x))}
    for k, p in layer.params.items():
        errs[k] = relative_error(analytic[k], numeric_gradient(f, p))
    return CheckResult(name or layer.name, max(errs.values()), errs)


@dataclass
class _Kinks:
    """Which ReLU units are on and which pool inputs win, for one forward pass."""

    patterns: list[np.ndarray]

    @classmethod
    def capture(cls, net) -> _Kinks:
        out = []
        for _, layer in net.layers:
            if isinstance(layer, ReLU):
                out.append(layer._cache.copy())
            elif isinstance(layer, MaxPool2D):
                out.append(layer._cache[0].copy())
        return cls(out)

    def __eq__(self, other) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.patterns, other.patterns))


def check_network(descriptor: ArchitectureDescriptor, seed: int = 0, batch: int = 3,
                  max_entries: int | None = None) -> CheckResult:
    """Whole-network check including the loss, on a continuous random input.

    ``max_entries`` limits the check to that many random entries per tensor.
    Entries whose +-h step moves any ReLU across zero or changes a max-pool
    winner straddle a point where the loss is not differentiable; they are
    skipped and counted in ``per_tensor['kinks_skipped']``.
    """
    rng = np.random.default_rng(seed)
    net = init_network(descriptor, seed, dtype=np.float64)
    for name, p in net.params.items():
        # non-zero biases exercise every path; weights move by a fraction of
        # their own spread so wide layers do not saturate the output clamp
        spread = 0.1 if name.endswith(".bias") else 0.3 * float(p.std())
        p += spread * rng.standard_normal(p.shape)
    c = descriptor.input_c
    x = rng.standard_normal((batch, c, c, c))
    if descriptor.variant == BINARY:
        y = (rng.random((batch, descriptor.au_count)) < 0.5).astype(np.float64)
        mask = (rng.random(y.shape) < 0.8).astype(np.float64)
        mask[0] = 1
        pos_w = rng.uniform(0.5, 3.0, descriptor.au_count)

        def loss(p):
            return binary_cross_entropy(p, y, mask, pos_w)
    else:
        t = rng.integers(0, descriptor.n_classes, (batch, descriptor.au_count))

        def loss(p):
            return categorical_cross_entropy(p, t)

    _, dp = loss(net.forward(x, train=True))
    base = _Kinks.capture(net)
    grads = net.backward(dp)

    def f_and_kinks():
        value = loss(net.forward(x, train=True))[0]
        return value, _Kinks.capture(net)

    errs, skipped = {}, 0
    for k, p in net.params.items():
        flat = p.reshape(-1)
        order = np.arange(p.size) if max_entries is None or p.size <= max_entries else rng.permutation(p.size)
        want = p.size if max_entries is None else min(max_entries, p.size)
        idx, num = [], []
        for i in order:
            if len(idx) == want:
                break
            old = flat[i]
            flat[i] = old + STEP
            fp, kp = f_and_kinks()
            flat[i] = old - STEP
            fm, km = f_and_kinks()
            flat[i] = old
            if not (kp == base and km == base):
                skipped += 1
                continue
            idx.append(i)
            num.append((fp - fm) / (2 * STEP))
        errs[k] = relative_error(grads[k].reshape(-1)[idx], np.array(num))
    net.clear_cache()
    result = CheckResult(f"network[{descriptor.variant}]", max(errs.values()), errs)
    result.per_tensor["kinks_skipped"] = float(skipped)
    return result


def small_descriptor(variant: str = BINARY, **kw) -> ArchitectureDescriptor:
    base = dict(input_c=6, conv_filters=(2, 3, 2, 3), dense_widths=(5, 4), au_count=3)
    base.update(kw)
    return ArchitectureDescriptor(variant=variant, **base)


def standard_layer_cases(seed: int = 0) -> list[tuple[str, Layer, np.ndarray]]:
    """One small instance of every layer type with a random float64 input."""
    rng = np.random.default_rng(seed)
    n = rng.standard_normal
    return [
        ("conv", Conv2D(n((3, 3, 2, 3)), n(3)), n((2, 5, 5, 2))),
        ("conv_sparse", Conv2D(n((3, 3, 2, 3)), n(3), sparse_input=True),
         n((2, 5, 5, 2)) * (rng.random((2, 5, 5, 2)) < 0.3)),
        ("conv5", Conv2D(n((5, 5, 2, 2)), n(2)), n((2, 4, 6, 2))),
        ("pool", MaxPool2D(), n((2, 5, 4, 2))),
        ("dense", Dense(n((6, 4)), n(4)), n((3, 6))),
        ("head_shared", HeadDense(n((3, 5, 4)), n((3, 4))), n((2, 5))),
        ("head", HeadDense(n((3, 5, 4)), n((3, 4))), n((2, 3, 5))),
        ("relu", ReLU(), n((3, 7))),
        ("sigmoid", Sigmoid(), 3 * n((3, 5))),
        ("softmax", Softmax(), 2 * n((2, 3, 3))),
    ]


def run_all(seeds=(0, 1, 2, 3, 4), full_descriptor: ArchitectureDescriptor | None = None) -> list[CheckResult]:
    results = []
    for s in seeds:
        for name, layer, x in standard_layer_cases(s):
            results.append(check_layer(layer, x, s, name))
        for variant in (BINARY, "3class"):
            d = full_descriptor if (full_descriptor and full_descriptor.variant == variant) else small_descriptor(variant)
            results.append(check_network(d, s))
    return results
