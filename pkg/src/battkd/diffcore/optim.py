from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params) -> None:
    """Bias-corrected Adam update of every trainable parameter, then zero grads.

    Moments are keyed by parameter identity.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        if not p.trainable:
            p.zero_grad()
            continue
        g = p.grad
        m = state.m.get(id(p))
        if m is None:
            m = state.m[id(p)] = np.zeros_like(p.data)
            state.v[id(p)] = np.zeros_like(p.data)
        v = state.v[id(p)]
        if m.shape != p.data.shape:
            raise ValueError(f"Adam moment shape {m.shape} != parameter {p.name} {p.data.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p.data = (p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)
        p.zero_grad()
