"""Cross-entropy losses returning (loss, d loss / d probabilities).

Probabilities are clamped to [eps, 1 - eps] before taking logs. The gradient
is the derivative of the loss evaluated at the clamped probability and is
passed straight through the clamp, so saturated outputs still receive a
(finite) signal.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch

PROB_EPS = 1e-7


def binary_cross_entropy(p: np.ndarray, y: np.ndarray, mask: np.ndarray | None = None,
                         pos_weight: np.ndarray | None = None, eps: float = PROB_EPS):
    """Weighted mean BCE over batch and outputs.

    ``mask`` (same shape, 1 = use) drops entries; ``pos_weight`` (one per
    output) scales the positive term. The mean divides by the total weight
    of the used entries, so a weighted loss equals the unweighted loss on a
    correspondingly resampled set.
    """
    p = np.asarray(p)
    y = np.asarray(y, dtype=p.dtype)
    if p.shape != y.shape:
        raise ShapeMismatch(f"predictions {p.shape} vs targets {y.shape}")
    m = np.ones_like(p) if mask is None else np.asarray(mask, dtype=p.dtype)
    if m.shape != p.shape:
        raise ShapeMismatch(f"mask {m.shape} vs predictions {p.shape}")
    wpos = np.ones(p.shape[-1], dtype=p.dtype) if pos_weight is None else np.asarray(pos_weight, dtype=p.dtype)
    # per-entry weight: w+ on positives, 1 on negatives
    w = m * (y * wpos + (1 - y))
    total = w.sum()
    if total == 0:
        return 0.0, np.zeros_like(p)
    pc = np.clip(p, eps, 1 - eps)
    per = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    loss = float((w * per).sum() / total)
    grad = w * (-y / pc + (1 - y) / (1 - pc)) / total
    return loss, grad.astype(p.dtype, copy=False)


def categorical_cross_entropy(p: np.ndarray, target: np.ndarray, class_weight: np.ndarray | None = None,
                              eps: float = PROB_EPS):
    """Mean over batch and heads of -log p[target].

    ``p`` is (B, heads, K); ``target`` holds class indices (B, heads).
    ``class_weight`` (heads, K) optionally weights each (head, class) term.
    """
    p = np.asarray(p)
    t = np.asarray(target, dtype=np.intp)
    if p.ndim != 3 or t.shape != p.shape[:2]:
        raise ShapeMismatch(f"predictions {p.shape} vs targets {t.shape}")
    picked = np.take_along_axis(p, t[..., None], axis=-1)[..., 0]
    if class_weight is None:
        w = np.ones(t.shape, dtype=p.dtype)
    else:
        cw = np.asarray(class_weight, dtype=p.dtype)
        w = np.take_along_axis(np.broadcast_to(cw, p.shape), t[..., None], axis=-1)[..., 0]
    total = w.sum()
    pc = np.clip(picked, eps, 1 - eps)
    loss = float((w * -np.log(pc)).sum() / total)
    grad = np.zeros_like(p)
    np.put_along_axis(grad, t[..., None], (-w / pc / total)[..., None], axis=-1)
    return loss, grad
