"""Layers with explicit forward/backward passes.

Each layer caches what its backward pass needs during ``forward`` and
returns the input gradient from ``backward``. Parameter gradients land in
``self.grads`` under the same keys as ``self.params``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import MissingCache, ShapeMismatch


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise MissingCache(f"{self.name}: backward called without a cached forward pass")
        return self._cache

    def clear(self):
        self._cache = None


def im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    """(B, H, W, C) -> (B*H_out*W_out, k*k*C) patches, stride 1, channels last."""
    b, h, w, c = x.shape
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    cols = np.empty((b, ho, wo, k, k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + ho, j:j + wo, :]
    return cols.reshape(b * ho * wo, k * k * c)


def im2col_sparse(x: np.ndarray, k: int, pad: int) -> sp.csr_matrix:
    """Same matrix as :func:`im2col` for a mostly-zero input, built from its non-zeros."""
    b, h, w, c = x.shape
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    bi, xi, yi, ci = np.nonzero(x)
    vals = x[bi, xi, yi, ci]
    rows, cols, data = [], [], []
    for i in range(k):
        for j in range(k):
            ox, oy = xi + pad - i, yi + pad - j
            ok = (ox >= 0) & (ox < ho) & (oy >= 0) & (oy < wo)
            rows.append((bi[ok] * ho + ox[ok]) * wo + oy[ok])
            cols.append((i * k + j) * c + ci[ok])
            data.append(vals[ok])
    return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(b * ho * wo, k * k * c), dtype=x.dtype)


def col2im(cols: np.ndarray, shape: tuple, k: int, pad: int) -> np.ndarray:
    b, h, w, c = shape
    ho, wo = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    cols = cols.reshape(b, ho, wo, k, k, c)
    xp = np.zeros((b, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + ho, j:j + wo, :] += cols[:, :, :, i, j, :]
    return xp[:, pad:pad + h, pad:pad + w, :]


class Conv2D(Layer):
    """Stride-1 'same' convolution on channels-last input (B, H, W, C).

    Weight shape (k, k, in, out). With ``input_grad=False`` the backward pass
    skips the input gradient (first layer of a network). ``sparse_input``
    builds the patch matrix from the input's non-zeros, which pays off for
    voxel grids where well under 1% of cells are set.
    """

    name = "conv"

    def __init__(self, weight: np.ndarray, bias: np.ndarray, input_grad: bool = True,
                 sparse_input: bool = False):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}
        k, k2, _, _ = weight.shape
        if k != k2 or k % 2 == 0:
            raise ShapeMismatch("conv kernels must be square with odd size")
        self.k = k
        self.pad = k // 2
        self.input_grad = input_grad
        self.sparse_input = sparse_input

    def forward(self, x, train=True):
        w, b = self.params["weight"], self.params["bias"]
        if x.ndim != 4 or x.shape[3] != w.shape[2]:
            raise ShapeMismatch(f"{self.name}: expected (B, H, W, {w.shape[2]}) input, got {x.shape}")
        bsz, h, wd, _ = x.shape
        cols = (im2col_sparse if self.sparse_input else im2col)(x, self.k, self.pad)
        out = np.asarray(cols @ w.reshape(-1, w.shape[3])) + b
        if train:
            self._cache = (cols, x.shape)
        return out.reshape(bsz, h, wd, -1)

    def backward(self, dout):
        cols, shape = self._take_cache()
        w = self.params["weight"]
        d = dout.reshape(-1, w.shape[3])
        self.grads = {"weight": np.asarray(cols.T @ d).reshape(w.shape), "bias": d.sum(axis=0)}
        if not self.input_grad:
            return None
        return col2im(d @ w.reshape(-1, w.shape[3]).T, shape, self.k, self.pad)


class ReLU(Layer):
    name = "relu"

    def forward(self, x, train=True):
        mask = x > 0
        if train:
            self._cache = mask
        return np.where(mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._take_cache(), dout, 0).astype(dout.dtype, copy=False)


class MaxPool2D(Layer):
    """2x2 max pool, stride 2, channels last. Odd trailing rows/columns are dropped.

    The backward pass routes each window's gradient to exactly one input:
    the first maximum in row-major window order.
    """

    name = "pool"

    def forward(self, x, train=True):
        b, h, w, c = x.shape
        ho, wo = h // 2, w // 2
        if ho == 0 or wo == 0:
            raise ShapeMismatch(f"{self.name}: input {h}x{w} too small to pool")
        win = np.stack([x[:, di:2 * ho:2, dj:2 * wo:2, :] for di in (0, 1) for dj in (0, 1)], axis=-1)
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (arg, x.shape)
        return out

    def backward(self, dout):
        arg, shape = self._take_cache()
        b, h, w, c = shape
        ho, wo = h // 2, w // 2
        dx = np.zeros(shape, dtype=dout.dtype)
        for n, (di, dj) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            dx[:, di:2 * ho:2, dj:2 * wo:2, :] = np.where(arg == n, dout, 0)
        return dx


class Flatten(Layer):
    name = "flatten"

    def forward(self, x, train=True):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._take_cache())


class Dense(Layer):
    """Weight shape (in, out)."""

    name = "dense"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}

    def forward(self, x, train=True):
        w = self.params["weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[0]:
            raise ShapeMismatch(f"{self.name}: expected (B, {w.shape[0]}) input, got {x.shape}")
        if train:
            self._cache = x
        return x @ w + self.params["bias"]

    def backward(self, dout):
        x = self._take_cache()
        self.grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ self.params["weight"].T


class HeadDense(Layer):
    """One independent dense layer per head, weight shape (heads, in, out).

    Accepts a shared (B, in) input, broadcast to every head, or a per-head
    (B, heads, in) input. Output is (B, heads, out).
    """

    name = "head"

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        super().__init__()
        self.params = {"weight": weight, "bias": bias}

    def forward(self, x, train=True):
        w = self.params["weight"]
        a, fin, fout = w.shape
        if x.ndim == 2 and x.shape[1] == fin:
            out = (x @ w.transpose(1, 0, 2).reshape(fin, a * fout)).reshape(-1, a, fout)
        elif x.ndim == 3 and x.shape[1:] == (a, fin):
            out = np.matmul(x.transpose(1, 0, 2), w).transpose(1, 0, 2)
        else:
            raise ShapeMismatch(f"{self.name}: input {x.shape} does not fit weight {w.shape}")
        if train:
            self._cache = x
        return out + self.params["bias"]

    def backward(self, dout):
        x = self._take_cache()
        w = self.params["weight"]
        a, fin, fout = w.shape
        d = dout.transpose(1, 0, 2)  # (A, B, out)
        if x.ndim == 2:
            gw = np.matmul(x.T[None], d)
            dx = dout.reshape(-1, a * fout) @ w.transpose(1, 0, 2).reshape(fin, a * fout).T
        else:
            gw = np.matmul(x.transpose(1, 2, 0), d)
            dx = np.matmul(d, w.transpose(0, 2, 1)).transpose(1, 0, 2)
        self.grads = {"weight": gw, "bias": dout.sum(axis=0)}
        return dx


class Sigmoid(Layer):
    name = "sigmoid"

    def forward(self, x, train=True):
        # split by sign so exp never overflows
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
        if train:
            self._cache = out
        return out

    def backward(self, dout):
        p = self._take_cache()
        return dout * p * (1 - p)


class Softmax(Layer):
    """Softmax over the last axis."""

    name = "softmax"

    def forward(self, x, train=True):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        out = e / e.sum(axis=-1, keepdims=True)
        if train:
            self._cache = out
        return out

    def backward(self, dout):
        p = self._take_cache()
        return p * (dout - (dout * p).sum(axis=-1, keepdims=True))
