"""Recursive long-horizon forecasting and over-smoothing diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seqdata
from .evaluation import mvr
from .timer import TimerModel

# differences with std below this (relative to the forecast scale) count as flat
_FLAT_TOL = 1e-12


@dataclass
class RolloutReport:
    total_horizon: int
    split: int
    std_first: float
    std_second: float
    mvr_first: float
    mvr_second: float
    flattening_ratio: float | None   # None when the first-half std is 0


def recursive_forecast(model, context, total_h: int) -> np.ndarray:
    """Feed predictions back as context until ``total_h`` values exist.

    The Timer keeps the whole growing token sequence (true context plus its own
    tokens) and fails once ``max_tokens`` is exhausted. Fixed-input experts see
    the most recent ``lookback`` values, so each block after the first is
    conditioned on earlier outputs. Works on one context or a batch.
    """
    ctx = np.asarray(context, dtype=np.float32)
    step = model.step
    if total_h <= 0 or total_h % step:
        raise ValueError(f"total horizon {total_h} must be a positive multiple of step {step}")
    if isinstance(model, TimerModel):
        n_ctx = ctx.shape[-1] // model.cfg.segment
        n_new = total_h // model.cfg.segment
        if n_ctx + n_new > model.cfg.max_tokens:
            raise ValueError(f"context window exhausted: {n_ctx} context + {n_new} generated tokens "
                             f"> max_tokens={model.cfg.max_tokens}")
        return model.forecast(ctx, n_new)
    lookback = ctx.shape[-1]
    hist = ctx
    out = []
    for _ in range(total_h // step):
        y = np.asarray(model.predict(hist[..., -lookback:]), dtype=np.float32)
        out.append(y)
        hist = np.concatenate([hist, y], axis=-1)
    return np.concatenate(out, axis=-1)


def _diff_std(x) -> float:
    if len(x) < 2:
        return 0.0
    s = float(np.std(np.diff(x)))
    return 0.0 if s <= _FLAT_TOL * max(1.0, float(np.max(np.abs(x)))) else s


def smoothing_diagnostics(forecast, split: int = seqdata.HORIZON) -> RolloutReport:
    """Std of first differences before and after ``split`` and their ratio.

    Differences are taken within each half, so the step across the split does
    not count. Adding a constant to the forecast leaves every field unchanged.
    """
    f = np.asarray(forecast, dtype=np.float64).ravel()
    if not 2 <= split <= len(f) - 2:
        raise ValueError(f"split {split} out of range for a forecast of length {len(f)}")
    a, b = f[:split], f[split:]
    s1, s2 = _diff_std(a), _diff_std(b)
    ratio = None if s1 == 0 else s2 / s1
    return RolloutReport(len(f), split, s1, s2, mvr(a), mvr(b), ratio)


def write_rollout_csv(truth, pred, path, split: int = seqdata.HORIZON):
    """Columns step, truth, prediction, segment (context / direct / recursive)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    truth = np.asarray(truth, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "truth", "prediction", "segment"])
        for k in range(max(len(truth), len(pred))):
            t = repr(float(truth[k])) if k < len(truth) else ""
            p = repr(float(pred[k])) if k < len(pred) else ""
            w.writerow([k + 1, t, p, "direct" if k < split else "recursive"])


def read_rollout_csv(path):
    truth, pred = [], []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            if row["truth"] != "":
                truth.append(float(row["truth"]))
            if row["prediction"] != "":
                pred.append(float(row["prediction"]))
    return np.array(truth), np.array(pred)


def write_report_kv(report: RolloutReport, path):
    seqdata.write_kv(path, {k: ("" if v is None else v) for k, v in vars(report).items()})


__all__ = ["RolloutReport", "recursive_forecast", "smoothing_diagnostics", "write_rollout_csv",
           "read_rollout_csv", "write_report_kv"]
