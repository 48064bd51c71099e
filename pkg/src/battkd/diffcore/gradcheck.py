from __future__ import annotations

import numpy as np


def grad_check(fn, params, eps=1e-6, max_coords=None, seed=0, ref_dtype=np.float64,
               zero_tol=1e-6):
    """Max relative error between analytic and central-difference gradients.

    ``fn`` builds a scalar Tensor from the current parameter values. The
    analytic side runs at the parameters' own precision (float32). The
    finite-difference side re-evaluates ``fn`` with parameters upcast to
    ``ref_dtype``: in float32 a 1e-3 step leaves a noise floor near
    1e-4 * |f|, which would swamp small gradient coordinates. In float64 a
    small step is safe, and it rarely straddles a ReLU kink, which a 1e-3
    step often does.

    Relative error per coordinate is |a - n| / (|a| + |n| + 1e-8). Frozen
    parameters are skipped. ``max_coords`` samples that many coordinates per
    parameter instead of checking all of them.

    Some coordinates have an exactly zero true gradient (a key-projection bias
    under softmax, for one); there the float32 analytic value is pure round-off
    and the relative error is meaningless. Coordinates where both sides are
    below ``zero_tol`` times the largest analytic entry count as agreeing.
    """
    params = [p for p in params if p.trainable]
    for p in params:
        p.zero_grad()
    out = fn()
    out.backward()
    analytic = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()

    floor = zero_tol * max((float(np.max(np.abs(a))) for a in analytic if a.size), default=0.0)
    originals = [p.data for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for p in params:
            p.data = p.data.astype(ref_dtype)
        for p, a in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = rng.choice(flat.size, size=max_coords, replace=False)
            for i in idx:
                old = flat[i]
                flat[i] = old + eps
                fp = fn().data.item()
                flat[i] = old - eps
                fm = fn().data.item()
                flat[i] = old
                num = (fp - fm) / (2 * eps)
                an = float(a.reshape(-1)[i])
                if abs(an) < floor and abs(num) < floor:
                    continue
                rel = abs(an - num) / (abs(an) + abs(num) + 1e-8)
                worst = max(worst, rel)
    finally:
        for p, o in zip(params, originals):
            p.data = o
    return worst
