"""Shared minibatch Adam loop used by pretraining, fine-tuning, supervised and KD runs."""

from __future__ import annotations

import numpy as np

from .diffcore import AdamState, adam_step


def fit(params, n_items: int, *, epochs: int, batch: int, lr: float, seed: int, step_fn,
        log_every=None):
    """Run ``epochs`` passes of shuffled minibatches.

    ``step_fn(idx)`` returns ``(loss_tensor, parts)`` where ``parts`` maps
    component names to floats. Returns one dict per epoch holding the mean
    of every component, weighted by batch size.
    """
    if n_items == 0:
        raise ValueError("nothing to train on: zero windows")
    params = list(params)
    state = AdamState(lr=lr)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n_items)
        sums: dict[str, float] = {}
        for start in range(0, n_items, batch):
            idx = order[start:start + batch]
            loss, parts = step_fn(idx)
            loss.backward()
            adam_step(state, params)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + float(v) * len(idx)
        row = {"epoch": epoch + 1}
        row.update({k: v / n_items for k, v in sums.items()})
        history.append(row)
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}: " + " ".join(f"{k}={v:.5g}" for k, v in row.items()
                                                    if k != "epoch"))
    return history
