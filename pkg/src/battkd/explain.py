"""LIME-style local attributions over lookback positions.

Each window is min-max scaled once; perturbations, kernel distances and the
surrogate all live in that scaled frame, and the forecaster sees the perturbed
scaled inputs directly. The explained scalar is the horizon mean.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import seqdata

SCHEMES = ("gaussian", "mean-mask")


@dataclass
class LimeConfig:
    n_samples: int = 200
    sigma: float | None = None      # None -> 0.75 * sqrt(L)
    ridge: float = 1e-3
    scheme: str = "gaussian"
    seed: int = 0
    noise_scale: float = 1.0        # gaussian std as a multiple of the window std
    mask_prob: float = 0.3

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown perturbation scheme {self.scheme!r}; choose from {SCHEMES}")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("kernel width sigma must be > 0")
        if not self.ridge > 0:
            raise ValueError("ridge strength must be > 0")
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples")

    def kernel_width(self, lookback: int) -> float:
        return self.sigma if self.sigma is not None else 0.75 * float(np.sqrt(lookback))


@dataclass
class AttributionMatrix:
    coef: np.ndarray        # (W, L)
    intercept: np.ndarray   # (W,)
    r2: np.ndarray          # (W,), nan where the weighted target variance is 0

    def __len__(self):
        return self.coef.shape[0]

    def summary(self) -> np.ndarray:
        """Mean absolute coefficient per lookback position."""
        return summary_importance(self.coef)


def summary_importance(coef) -> np.ndarray:
    coef = np.asarray(coef, dtype=np.float64)
    if coef.shape[0] == 0:
        return np.zeros(coef.shape[1:])
    return np.mean(np.abs(coef), axis=0)


def scalarize(model, x) -> np.ndarray:
    """Horizon mean of the model forecast; ``x`` is one scaled window or a batch."""
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(model.predict(x), dtype=np.float64)
    return y.mean(axis=-1)


def perturb(x, cfg: LimeConfig, rng: np.random.Generator):
    """Return (samples (N, L), kernel weights (N,)); row 0 is the unperturbed input."""
    x = np.asarray(x, dtype=np.float64)
    n, L = cfg.n_samples, x.shape[0]
    if cfg.scheme == "gaussian":
        std = cfg.noise_scale * x.std()
        z = x + rng.standard_normal((n, L)) * std
    else:
        mask = rng.random((n, L)) < cfg.mask_prob
        z = np.where(mask, x.mean(), x)
    z[0] = x
    d2 = np.sum((z - x) ** 2, axis=1)
    weights = np.exp(-d2 / cfg.kernel_width(L) ** 2)
    return z, weights


def fit_surrogate(z, g, weights, ridge: float):
    """Weighted ridge fit g ~ w.z + b with an unpenalised intercept.

    Weights are rescaled to mean 1 first, so multiplying them by a constant does
    not change the solution. Returns (w, b, weighted R^2 or nan).
    """
    if not ridge > 0:
        raise ValueError("ridge strength must be > 0")
    z = np.asarray(z, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    pi = np.asarray(weights, dtype=np.float64)
    pi = pi / pi.mean()
    zbar = pi @ z / pi.sum()
    gbar = pi @ g / pi.sum()
    zc, gc = z - zbar, g - gbar
    a = (zc * pi[:, None]).T @ zc + ridge * np.eye(z.shape[1])
    w = np.linalg.solve(a, (zc * pi[:, None]).T @ gc)
    b = gbar - zbar @ w
    ss_tot = float(pi @ (gc * gc))
    resid = g - (z @ w + b)
    r2 = np.nan if ss_tot == 0 else 1.0 - float(pi @ (resid * resid)) / ss_tot
    return w, float(b), r2


def window_seed(seed: int, x) -> np.random.SeedSequence:
    """Seed derived from the global seed and the window contents, so identical
    windows get identical sample sets regardless of their position."""
    digest = hashlib.sha256(np.ascontiguousarray(x, dtype=np.float64).tobytes()).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32).tolist()
    return np.random.SeedSequence([int(seed), *words])


def attribute_model(model, windows, cfg: LimeConfig | None = None, *, scaled: bool = False,
                    ) -> AttributionMatrix:
    """One surrogate per lookback window.

    ``windows`` is a (W, L) array of raw lookbacks (scaled here) or, with
    ``scaled=True`` or a :class:`WindowSet`, already-scaled inputs.
    """
    cfg = cfg or LimeConfig()
    if isinstance(windows, seqdata.WindowSet):
        xs, scaled = windows.x, True
    else:
        xs = np.asarray(windows, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[None]
    if xs.shape[0] == 0:
        raise ValueError("no windows to attribute")
    L = xs.shape[1]
    if cfg.n_samples < L:
        warnings.warn(f"n_samples={cfg.n_samples} < lookback {L}; surrogate relies on ridge",
                      stacklevel=2)
    coefs, bs, r2s = [], [], []
    for raw in xs:
        x = np.asarray(raw, dtype=np.float64) if scaled else seqdata.minmax_scale(raw)[0]
        rng = np.random.default_rng(window_seed(cfg.seed, x))
        z, pi = perturb(x, cfg, rng)
        g = scalarize(model, z)
        w, b, r2 = fit_surrogate(z, g, pi, cfg.ridge)
        coefs.append(w)
        bs.append(b)
        r2s.append(r2)
    return AttributionMatrix(np.array(coefs), np.array(bs), np.array(r2s, dtype=np.float64))


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def write_attribution_csv(att: AttributionMatrix, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    L = att.coef.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "intercept", "r2", *(f"p{k}" for k in range(1, L + 1))])
        for i in range(len(att)):
            w.writerow([i, _fmt(att.intercept[i]), _fmt(att.r2[i]),
                        *(repr(float(v)) for v in att.coef[i])])


def read_attribution_csv(path) -> AttributionMatrix:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]

    def num(s):
        return np.nan if s == "" else float(s)

    coef = np.array([[float(v) for v in r[3:]] for r in body]).reshape(len(body), len(rows[0]) - 3)
    return AttributionMatrix(coef, np.array([num(r[1]) for r in body]),
                             np.array([num(r[2]) for r in body]))


def write_summary_csv(summary, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["position", "mean_abs_coef"])
        for k, v in enumerate(summary, start=1):
            w.writerow([k, repr(float(v))])


__all__ = [
    "SCHEMES", "LimeConfig", "AttributionMatrix", "summary_importance", "scalarize", "perturb",
    "fit_surrogate", "window_seed", "attribute_model", "write_attribution_csv",
    "read_attribution_csv", "write_summary_csv",
]
