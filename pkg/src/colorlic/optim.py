"""Adam optimizer and gradient utilities."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    ``params`` maps names to tensors whose ``.grad`` has been populated.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise UsageError(f"missing gradient for {missing[:3]}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data -= update.astype(p.data.dtype)
    return state


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params.values())))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            p.grad = (p.grad * scale).astype(p.grad.dtype)
    return total
