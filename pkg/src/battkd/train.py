"""Degradation-aware LoRA fine-tuning: horizon MSE plus a sigmoid trend penalty."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seqdata
from .diffcore import Tensor, mean, mse, mul, sigmoid, sub, tensor
from .fitting import fit
from .lora import save_adapters


@dataclass
class FinetuneConfig:
    epochs: int = 5
    batch: int = 64
    lr: float = 1e-4
    lambda_trend: float = 0.02
    train_stride: int = 1

    def __post_init__(self):
        if self.lambda_trend < 0:
            raise ValueError("lambda_trend must be >= 0")


def trend_penalty(y_hat) -> Tensor:
    """sigmoid(last - first) of a forecast; batch mean for 2-D input."""
    y_hat = tensor(y_hat)
    if y_hat.shape[-1] < 2:
        raise ValueError("trend penalty needs a horizon of at least 2 steps")
    per = sigmoid(sub(y_hat[..., -1], y_hat[..., 0]))
    return mean(per) if per.ndim else per


def finetune_loss(y_hat, y, lam: float):
    """Returns (total, mse, trend) tensors."""
    y_hat, y = tensor(y_hat), tensor(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"length mismatch: {y_hat.shape} vs {y.shape}")
    fit_term = mse(y_hat, y)
    trend = trend_penalty(y_hat)
    return fit_term + mul(trend, float(lam)), fit_term, trend


def finetune(model, corpora, cfg: FinetuneConfig | None = None, *, seed: int = 0,
             adapter_path=None, windows: seqdata.WindowSet | None = None, log_every=None):
    """Train the injected adapters on stride-``train_stride`` windows of ``corpora``.

    Returns the per-epoch history (epoch, mse, trend, total).
    """
    cfg = cfg or FinetuneConfig()
    if getattr(model, "lora", None) is None:
        raise ValueError("finetune expects a model with injected LoRA adapters")
    if windows is None:
        series = [s for c in corpora for s in c.series]
        windows = seqdata.build_windows(series, stride=cfg.train_stride)
    if len(windows) == 0:
        raise ValueError("corpus yields zero windows")
    seg = model.cfg.segment
    n_ctx = windows.x.shape[1] // seg
    n_gen = windows.y.shape[1] // seg
    x_tok = windows.x.reshape(len(windows), n_ctx, seg)
    trainable = [p for p in model.parameters() if p.trainable]
    model.train()

    def step(idx):
        y_hat = model.rollout(x_tok[idx], n_gen)
        total, fit_term, trend = finetune_loss(y_hat, windows.y[idx], cfg.lambda_trend)
        return total, {"mse": fit_term.data, "trend": trend.data, "total": total.data}

    history = fit(trainable, len(windows), epochs=cfg.epochs, batch=cfg.batch, lr=cfg.lr,
                  seed=seed, step_fn=step, log_every=log_every)
    model.eval()
    if adapter_path is not None:
        save_adapters(model, adapter_path, {"finetune.lambda_trend": cfg.lambda_trend,
                                            "seed": seed})
    return history


def write_history(history, path, columns=("epoch", "mse", "trend", "total")):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in history:
            w.writerow([row["epoch"]] + [repr(float(row[c])) for c in columns[1:]])
    return path


def read_history(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in r.items()} for r in rows]


def median_mvr(model, windows: seqdata.WindowSet) -> float:
    from .evaluation import mvr
    pred = model.predict(windows.x)
    return float(np.median([mvr(p) for p in pred]))
