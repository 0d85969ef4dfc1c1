"""Adam with bias correction and linear warm-up."""
from __future__ import annotations

import numpy as np

from .layers import ParamStore


def warmup_lr(lr: float, step: int, warmup_steps: int) -> float:
    """``lr * step / W`` for the first ``W`` steps, ``lr`` afterwards (``step`` is 1-based)."""
    if warmup_steps <= 0:
        return lr
    return lr * min(1.0, step / warmup_steps)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, warmup_steps: int = 0, grad_clip: float | None = None) -> float:
    """Apply one Adam update to every parameter; returns the effective learning rate."""
    store.step += 1
    t = store.step
    rate = warmup_lr(lr, t, warmup_steps)
    grads = {name: store.grad(name) for name, _ in store}
    if grad_clip is not None:
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        if norm > grad_clip:
            grads = {k: g * (grad_clip / norm) for k, g in grads.items()}
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store:
        g = grads[name]
        m = store.adam_m.get(name)
        v = store.adam_v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        store.adam_m[name] = m
        store.adam_v[name] = v
        p.data = p.data - rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return rate
