"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


class AdamState:
    """Moment accumulators plus step counter for one parameter set."""

    def __init__(self, params: dict[str, np.ndarray], alpha: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.alpha = alpha
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, applied to params in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeError(f"parameter {k!r}: gradient shape {g.shape} != {p.shape}")
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * (g * g)
        m_hat = state.m[k] / (1 - b1 ** t)
        v_hat = state.v[k] / (1 - b2 ** t)
        p -= state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
