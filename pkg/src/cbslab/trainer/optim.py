"""Adam with global-norm gradient clipping (no weight decay)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteGradient(FloatingPointError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite gradient at step {step}")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def clip_by_global_norm(grads, max_norm):
    norm = float(np.linalg.norm(grads))
    if max_norm is not None and norm > max_norm:
        return grads * (max_norm / norm), norm
    return grads, norm


def adam_step(state: AdamState, params, grads, lr, beta1=0.95, beta2=0.99, eps=1e-8, clip_norm=1.0):
    """Return ``(new_params, new_state)``; inputs are not modified."""
    if params.shape != grads.shape:
        raise ValueError(f"parameter shape {params.shape} != gradient shape {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteGradient(state.t)
    g, _ = clip_by_global_norm(grads, clip_norm)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)
