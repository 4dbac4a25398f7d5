"""Adam with bias correction and a log-linear learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, p: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(p, dtype=np.float64), np.zeros_like(p, dtype=np.float64), 0)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8, name: str = "param") -> np.ndarray:
    """One Adam update; returns the new parameter and advances ``state`` in place."""
    if param.shape != grad.shape:
        raise ValueError(f"{name}: grad shape {grad.shape} != param shape {param.shape}")
    if not np.isfinite(grad).all():
        raise NonFiniteGradient(f"non-finite gradient in parameter block {name!r}")
    b1, b2 = betas
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    mhat = state.m / (1.0 - b1 ** state.t)
    vhat = state.v / (1.0 - b2 ** state.t)
    return param - lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam over a dict of named parameter arrays, one shared learning rate."""

    def __init__(self, params: dict[str, np.ndarray], betas=(0.9, 0.999), eps: float = 1e-8):
        self.betas, self.eps = betas, eps
        self.states = {k: AdamState.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
             prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                g = np.zeros_like(p)
            out[k] = adam_step(p, g, self.states[k], lr, self.betas, self.eps, prefix + k)
        return out


def exp_decay(lr0: float, lr1: float, step: int, total: int) -> float:
    """Log-linear interpolation from ``lr0`` at step 0 to ``lr1`` at step ``total - 1``."""
    if total <= 1:
        return lr1
    frac = min(max(step / (total - 1), 0.0), 1.0)
    if frac == 1.0:
        return lr1
    return lr0 * math.exp(frac * math.log(lr1 / lr0))
