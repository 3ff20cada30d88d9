"""Adam optimizer with per-parameter first/second moment state.

Update rule (per element): m and v are exponential moving averages of the
gradient and its square; after bias correction the step is
``lr * m_hat / (sqrt(v_hat) + epsilon)``, which keeps the per-element step
magnitude near or below ``lr``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericsError, ShapeError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # gradient clipping is off unless a positive max-norm is configured
    clip_norm: float = 0.0

    def moments_for(self, name: str, param: np.ndarray):
        if name not in self.m:
            self.m[name] = np.zeros_like(param)
            self.v[name] = np.zeros_like(param)
        m, v = self.m[name], self.v[name]
        if m.shape != param.shape or v.shape != param.shape:
            raise ShapeError(f"moment shape mismatch for {name!r}")
        return m, v


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.ravel(), g.ravel()))
    return float(np.sqrt(total))


def step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
         state: AdamState) -> None:
    """One Adam update, in place, over every named parameter.

    Raises :class:`NumericsError` naming the parameter if its gradient
    contains NaN or Inf.
    """
    for name in params:
        if name not in grads:
            raise ShapeError(f"missing gradient for parameter {name!r}")
        if not np.all(np.isfinite(grads[name])):
            raise NumericsError(f"non-finite gradient for parameter {name!r}")

    scale = np.float32(1.0)
    if state.clip_norm > 0.0:
        norm = _global_norm(grads)
        if norm > state.clip_norm:
            scale = np.float32(state.clip_norm / norm)

    state.t += 1
    b1, b2 = np.float32(state.beta1), np.float32(state.beta2)
    bias1 = np.float32(1.0 - state.beta1 ** state.t)
    bias2 = np.float32(1.0 - state.beta2 ** state.t)
    lr = np.float32(state.lr)
    eps = np.float32(state.epsilon)
    one = np.float32(1.0)

    for name, p in params.items():
        g = grads[name] * scale if scale != 1.0 else grads[name]
        m, v = state.moments_for(name, p)
        m *= b1
        m += (one - b1) * g
        v *= b2
        v += (one - b2) * np.square(g)
        m_hat = m / bias1
        v_hat = v / bias2
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
