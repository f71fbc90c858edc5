from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """
    for k, g in grads.items():
        if k not in params or params[k].shape != np.shape(g):
            raise ShapeMismatch(f"gradient {k!r} does not match any parameter shape")
        if k in state.m and state.m[k].shape != params[k].shape:
            raise ShapeMismatch(f"Adam moment {k!r} has shape {state.m[k].shape}, parameter {params[k].shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, g in grads.items():
        p = params[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype, copy=False)
    return state
