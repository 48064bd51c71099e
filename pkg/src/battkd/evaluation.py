"""Window-protocol evaluation, error metrics, monotonicity violation rate and ranking."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import seqdata


@dataclass
class MetricReport:
    mae: float
    rmse: float
    mape_percent: float | None
    r2: float | None
    mvr: float
    n_windows: int
    model: str = ""
    protocol: str = ""
    regime: str = ""


def metrics(y, y_hat) -> dict:
    """MAE, RMSE, MAPE (%) and R^2 of pooled values.

    R^2 is None when the truth is constant; MAPE is None when any |y| <= 1e-9.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.shape != y_hat.shape or y.size == 0:
        raise ValueError(f"need equal non-empty lengths, got {y.shape} and {y_hat.shape}")
    e = y_hat - y
    mae = float(np.mean(np.abs(e)))
    # scale before squaring so tiny errors do not underflow to 0
    peak = float(np.max(np.abs(e)))
    rmse = peak * float(np.sqrt(np.mean((e / peak) ** 2))) if peak > 0 else 0.0
    mape = float(100.0 * np.mean(np.abs(e / y))) if np.all(np.abs(y) > 1e-9) else None
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum(e * e)) / ss_tot
    return {"mae": mae, "rmse": rmse, "mape_percent": mape, "r2": r2}


def mvr(y_hat) -> float:
    """Share of strictly positive adjacent differences; zero steps are not violations."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y_hat.shape[-1] < 2:
        raise ValueError("MVR needs at least 2 forecast steps")
    return float(np.mean(np.diff(y_hat) > 0))


def forecast_windows(model, windows: seqdata.WindowSet, batch: int = 256) -> np.ndarray:
    """Model forecasts for each window, mapped back to capacity units."""
    preds = [model.predict(windows.x[i:i + batch]) for i in range(0, len(windows), batch)]
    pred = np.concatenate(preds) if preds else np.zeros_like(windows.y)
    return seqdata.unscale_rows(pred, windows.lo, windows.hi)


def evaluate_windows(model, windows: seqdata.WindowSet, *, model_id="", protocol="",
                     regime="") -> MetricReport:
    if len(windows) == 0:
        raise ValueError("no evaluation windows")
    pred = forecast_windows(model, windows)
    m = metrics(windows.raw_y(), pred)
    return MetricReport(m["mae"], m["rmse"], m["mape_percent"], m["r2"],
                        float(np.mean([mvr(p) for p in pred])), len(windows),
                        model_id, protocol, regime)


def evaluate_protocol(model, corpus, protocol: str | None = None, *, model_id="",
                      regime="", stride: int = seqdata.EVAL_STRIDE) -> MetricReport:
    """Split each trajectory into contiguous 192-step windows, forecast the last 96
    from the first 96, and pool the errors in capacity units."""
    series = corpus.series if hasattr(corpus, "series") else list(corpus)
    windows = seqdata.build_windows(series, stride=stride, protocol=protocol)
    return evaluate_windows(model, windows, model_id=model_id, protocol=protocol or "all",
                            regime=regime)


def per_cell_mae(model, corpus, protocol: str | None = None) -> dict[str, float]:
    out = {}
    for s in corpus.series:
        if protocol is not None and s.protocol != protocol:
            continue
        w = seqdata.build_windows([s])
        if len(w):
            out[s.cell_id] = metrics(w.raw_y(), forecast_windows(model, w))["mae"]
    return out


# ---------------------------------------------------------------------------
# ranking


@dataclass
class RankTable:
    methods: list[str]
    cells: list[str]
    errors: np.ndarray        # (k methods, n cells)
    ranks: np.ndarray         # same shape, 1 = best
    avg_ranks: np.ndarray     # (k,)
    statistic: float
    p_value: float


def friedman(errors, methods=None, cells=None) -> RankTable:
    """Rank methods within each cell (ascending error, ties share the average rank)."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.ndim != 2 or errors.shape[0] < 2 or errors.shape[1] < 2:
        raise ValueError(f"need a methods x cells matrix with >= 2 of each, got {errors.shape}")
    k, n = errors.shape
    ranks = np.column_stack([stats.rankdata(errors[:, j], method="average") for j in range(n)])
    avg = ranks.mean(axis=1)
    chi2 = 12.0 * n / (k * (k + 1)) * (np.sum(avg ** 2) - k * (k + 1) ** 2 / 4.0)
    p = float(stats.chi2.sf(chi2, k - 1))
    methods = list(methods) if methods is not None else [f"m{i}" for i in range(k)]
    cells = list(cells) if cells is not None else [f"c{j}" for j in range(n)]
    return RankTable(methods, cells, errors, ranks, avg, float(chi2), p)


def write_rank_table(table: RankTable, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", *table.cells, "avg_rank"])
        for i, m in enumerate(table.methods):
            w.writerow([m, *(repr(float(v)) for v in table.errors[i]), repr(float(table.avg_ranks[i]))])
        w.writerow(["friedman_chi2", repr(table.statistic)])
        w.writerow(["p_value", repr(table.p_value)])


# ---------------------------------------------------------------------------
# record files

_FIELDS = [f.name for f in fields(MetricReport)]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_reports(reports, path, extra_columns=()):
    """One row per report; ``extra_columns`` are attribute names stored in ``report.extra``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FIELDS + list(extra_columns))
        for r in reports:
            d = asdict(r)
            row = [_fmt(d[f]) for f in _FIELDS]
            row += [_fmt(getattr(r, "extra", {}).get(c)) for c in extra_columns]
            w.writerow(row)


def read_reports(path) -> list[MetricReport]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for f in _FIELDS:
                raw = row[f]
                if f in ("model", "protocol", "regime"):
                    vals[f] = raw
                elif f == "n_windows":
                    vals[f] = int(raw)
                else:
                    vals[f] = None if raw == "" else float(raw)
            rep = MetricReport(**vals)
            extra = {k: v for k, v in row.items() if k not in _FIELDS}
            if extra:
                rep.extra = extra
            out.append(rep)
    return out


def comparison_table(reports) -> str:
    """Markdown table of MAE/RMSE/R2/MAPE/MVR, one row per report."""
    lines = ["| model | protocol | regime | MAE | RMSE | R2 | MAPE (%) | MVR | windows |",
             "|---|---|---|---|---|---|---|---|---|"]
    for r in reports:
        r2 = "n/a" if r.r2 is None else f"{r.r2:.3f}"
        mape = "n/a" if r.mape_percent is None else f"{r.mape_percent:.3f}"
        lines.append(f"| {r.model} | {r.protocol} | {r.regime} | {r.mae:.4f} | {r.rmse:.4f} "
                     f"| {r2} | {mape} | {r.mvr:.3f} | {r.n_windows} |")
    return "\n".join(lines) + "\n"


def lobo(seed: int, config=None, *, workers: int = 1):
    """Leave-one-family-out fine-tuning runs; see :func:`battkd.pipeline.run_lobo`."""
    from .pipeline import run_lobo
    return run_lobo(seed, config, workers=workers)
