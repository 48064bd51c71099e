"""Cycle-indexed capacity sequences: loading, synthesis, windowing and scaling."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOOKBACK = 96
HORIZON = 96
EVAL_STRIDE = LOOKBACK + HORIZON
GENERATOR_VERSION = "1"

PROTOCOLS = ("CC", "CCCV")
FAMILIES = ("WZU-like", "CALCE-like", "XJTU-like", "SJTU-like")
CSV_HEADER = ["cell_id", "protocol", "cycle", "capacity_ah"]


class DataError(ValueError):
    """Raised for malformed capacity data."""


@dataclass
class CapacitySeries:
    cell_id: str
    protocol: str
    cycles: np.ndarray
    capacity: np.ndarray
    source: str = "real"

    def __post_init__(self):
        self.cycles = np.asarray(self.cycles, dtype=np.int64)
        self.capacity = np.asarray(self.capacity, dtype=np.float64)
        if self.protocol not in PROTOCOLS:
            raise DataError(f"{self.cell_id}: unknown protocol {self.protocol!r}")
        if self.source not in ("real", "synthetic"):
            raise DataError(f"{self.cell_id}: unknown source {self.source!r}")
        if self.cycles.ndim != 1 or self.cycles.shape != self.capacity.shape:
            raise DataError(f"{self.cell_id}: cycles and capacity lengths differ")
        if len(self.cycles) and self.cycles[0] < 0:
            raise DataError(f"{self.cell_id}: negative cycle index")
        if np.any(np.diff(self.cycles) <= 0):
            raise DataError(f"{self.cell_id}: cycles must be strictly increasing")
        if np.any(~(self.capacity > 0)):
            raise DataError(f"{self.cell_id}: capacity values must be > 0")

    def __len__(self):
        return len(self.cycles)


@dataclass
class WindowPair:
    input: np.ndarray
    target: np.ndarray
    origin: tuple[str, int]


@dataclass(frozen=True)
class ScaleParams:
    min: float
    max: float


@dataclass
class Corpus:
    name: str
    series: list[CapacitySeries]
    family: str
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.series:
            raise DataError(f"corpus {self.name!r} is empty")

    def select(self, protocol: str | None = None) -> list[CapacitySeries]:
        if protocol is None:
            return list(self.series)
        return [s for s in self.series if s.protocol == protocol]


# ---------------------------------------------------------------------------
# CSV ingest / export


def _parse_protocol(token: str) -> str | None:
    token = token.strip().upper()
    return token if token in PROTOCOLS else None


def load_csv(path, source: str = "real") -> list[CapacitySeries]:
    """Read a ``cell_id,protocol,cycle,capacity_ah`` file into one series per cell.

    Rows may appear in any order; each cell is sorted by cycle. Errors name the
    offending line (1-based, header is line 1).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    cells: dict[str, dict] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CSV_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            cell_id, proto_tok, cycle_tok, cap_tok = (c.strip() for c in row)
            if not cell_id:
                raise DataError(f"{path}:{lineno}: empty cell_id")
            protocol = _parse_protocol(proto_tok)
            if protocol is None:
                raise DataError(f"{path}:{lineno}: unknown protocol {proto_tok!r}")
            try:
                cycle = int(cycle_tok)
                cap = float(cap_tok)
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from None
            if cycle < 0:
                raise DataError(f"{path}:{lineno}: cycle must be non-negative")
            if not cap > 0:
                raise DataError(f"{path}:{lineno}: capacity_ah must be > 0, got {cap_tok}")
            entry = cells.setdefault(cell_id, {"protocol": protocol, "rows": {}})
            if entry["protocol"] != protocol:
                raise DataError(f"{path}:{lineno}: cell {cell_id} changes protocol")
            if cycle in entry["rows"]:
                raise DataError(f"{path}:{lineno}: duplicate cycle {cycle} for cell {cell_id}")
            entry["rows"][cycle] = cap
    out = []
    for cell_id, entry in cells.items():
        cyc = np.array(sorted(entry["rows"]), dtype=np.int64)
        cap = np.array([entry["rows"][c] for c in cyc], dtype=np.float64)
        out.append(CapacitySeries(cell_id, entry["protocol"], cyc, cap, source))
    return out


def save_csv(series: list[CapacitySeries], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in series:
            for c, q in zip(s.cycles, s.capacity):
                w.writerow([s.cell_id, s.protocol, int(c), repr(float(q))])


def save_corpus(corpus: Corpus, directory) -> Path:
    """Write ``<name>.csv`` plus a ``<name>.manifest`` key-value file."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{corpus.name}.csv"
    save_csv(corpus.series, csv_path)
    meta = {
        "name": corpus.name,
        "family": corpus.family,
        "seed": "" if corpus.seed is None else str(corpus.seed),
        "generator_version": GENERATOR_VERSION,
        "n_series": str(len(corpus.series)),
        "source": corpus.series[0].source,
    }
    meta.update({k: str(v) for k, v in corpus.meta.items()})
    write_kv(directory / f"{corpus.name}.manifest", meta)
    return csv_path


def load_corpus(directory, name: str) -> Corpus:
    directory = Path(directory)
    meta = read_kv(directory / f"{name}.manifest")
    source = meta.get("source", "real")
    series = load_csv(directory / f"{name}.csv", source=source)
    order = {s.cell_id: i for i, s in enumerate(series)}
    series.sort(key=lambda s: _cell_sort_key(s.cell_id, order))
    seed = int(meta["seed"]) if meta.get("seed") else None
    extra = {k: v for k, v in meta.items()
             if k not in ("name", "family", "seed", "generator_version", "n_series", "source")}
    return Corpus(meta.get("name", name), series, meta.get("family", "custom"), seed, extra)


def _cell_sort_key(cell_id, order):
    # keeps "x-2" before "x-10" for generated ids
    head, _, tail = cell_id.rpartition("-")
    return (head, int(tail)) if tail.isdigit() else (cell_id, order[cell_id])


def write_kv(path, mapping: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"{k} = {v}" for k, v in mapping.items()]
    path.write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# ---------------------------------------------------------------------------
# Synthetic corpora


@dataclass(frozen=True)
class FamilyPreset:
    code: int
    c0_choices: tuple[float, ...]
    c0_jitter: float
    a_range: tuple[float, float]
    b_range: tuple[float, float]
    g_range: tuple[float, float]
    noise_rel: float
    jump_rate: float = 0.0
    jump_rel: float = 0.0
    jump_decay: float = 10.0


# Capacity anchors follow the public datasets: WZU cells are 1 / 0.8 / 3 Ah,
# CALCE 1.1 Ah, XJTU 2.0 Ah and the SJTU storage cell 13 Ah.
PRESETS: dict[str, FamilyPreset] = {
    "WZU-like": FamilyPreset(1, (1.0, 0.8, 3.0), 0.02, (0.04, 0.10), (6e-3, 1.5e-2),
                             (1.5e-4, 3.0e-4), 0.0030),
    "CALCE-like": FamilyPreset(2, (1.10,), 0.03, (0.08, 0.16), (3e-3, 8e-3),
                               (4e-4, 7e-4), 0.0020),
    "XJTU-like": FamilyPreset(3, (2.00,), 0.02, (0.12, 0.22), (1.5e-3, 4e-3),
                              (2.5e-4, 4.5e-4), 0.0015),
    "SJTU-like": FamilyPreset(4, (13.0,), 0.02, (0.02, 0.05), (1e-2, 3e-2),
                              (1.0e-4, 2.0e-4), 0.0008,
                              jump_rate=0.02, jump_rel=0.012, jump_decay=8.0),
}
CCCV_RATE_FACTOR = 0.6
# CC cells develop a late knee: past a random onset the fade rate rises by
# KNEE_GAIN times the slow rate. CCCV cells keep their smooth fade.
KNEE_ONSET = (0.35, 0.75)
KNEE_GAIN = (2.0, 5.0)
KNEE_WIDTH = 40.0


def fade_curve(cycles, c0, a, b, g):
    cycles = np.asarray(cycles, dtype=np.float64)
    return c0 * (a * np.exp(-b * cycles) + (1.0 - a) * np.exp(-g * cycles))


def _cell_rng(seed: int, code: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), code, index]))


def synthesize_corpus(family: str, n_cells: int, n_cycles: int, seed: int, *,
                      noise: bool = True, jumps: bool = True,
                      name: str | None = None) -> Corpus:
    """Generate a deterministic synthetic corpus for one family preset.

    The first ``n_cells // 2`` cells are CC, the rest CCCV; CCCV fade rates are
    multiplied by ``CCCV_RATE_FACTOR`` and only CC cells get a knee.
    """
    if family not in PRESETS:
        raise DataError(f"unknown family {family!r}; choose from {', '.join(PRESETS)}")
    if n_cycles < EVAL_STRIDE:
        raise DataError(f"n_cycles must be >= {EVAL_STRIDE}, got {n_cycles}")
    if n_cells < 1:
        raise DataError("n_cells must be >= 1")
    p = PRESETS[family]
    prefix = family.split("-")[0].lower()
    cycles = np.arange(n_cycles, dtype=np.int64)
    series = []
    for i in range(n_cells):
        rng = _cell_rng(seed, p.code, i)
        protocol = "CC" if i < n_cells // 2 else "CCCV"
        c0 = rng.choice(p.c0_choices) * (1.0 + p.c0_jitter * rng.uniform(-1, 1))
        a = rng.uniform(*p.a_range)
        b = rng.uniform(*p.b_range)
        g = rng.uniform(*p.g_range)
        if protocol == "CCCV":
            b, g = b * CCCV_RATE_FACTOR, g * CCCV_RATE_FACTOR
        cap = fade_curve(cycles, c0, a, b, g)
        # draw noise and jumps unconditionally so toggles do not shift the stream
        eps = rng.normal(0.0, p.noise_rel * c0, size=n_cycles)
        events = rng.random(n_cycles) < p.jump_rate
        sizes = rng.uniform(0.5, 1.5, size=n_cycles) * p.jump_rel * c0
        onset = rng.uniform(*KNEE_ONSET) * n_cycles
        gain = rng.uniform(*KNEE_GAIN) * g
        if protocol == "CC":
            ramp = KNEE_WIDTH * np.logaddexp(0.0, (cycles - onset) / KNEE_WIDTH)
            cap = cap * np.exp(-gain * ramp)
        if jumps and p.jump_rate > 0:
            bump = np.zeros(n_cycles)
            for t in np.flatnonzero(events):
                tail = np.arange(n_cycles - t)
                bump[t:] += sizes[t] * np.exp(-tail / p.jump_decay)
            cap = cap + bump
        if noise:
            cap = cap + eps
        cap = np.maximum(cap, 1e-3 * c0)
        series.append(CapacitySeries(f"{prefix}-{i}", protocol, cycles.copy(), cap, "synthetic"))
    return Corpus(name or prefix, series, family, seed,
                  {"n_cells": n_cells, "n_cycles": n_cycles})


def synthesize_generic(n_series: int, length: int, seed: int, name: str = "generic") -> Corpus:
    """Diverse positive univariate curves used for desk-scale generic pretraining.

    Mixes linear and exponential trends, seasonal components, random walks and
    level shifts, so the backbone learns generic continuation before it ever
    sees a capacity curve.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 99]))
    t = np.arange(length, dtype=np.float64)
    series = []
    for i in range(n_series):
        x = np.zeros(length)
        x += rng.normal(0, 1) * t / length
        if rng.random() < 0.5:
            x += rng.normal(0, 1) * np.exp(-t / rng.uniform(20, 2 * length))
        for _ in range(rng.integers(0, 3)):
            period = rng.uniform(8, length)
            x += rng.uniform(0, 0.5) * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
        if rng.random() < 0.4:
            x += np.cumsum(rng.normal(0, rng.uniform(0.005, 0.05), size=length))
        if rng.random() < 0.2:
            x[rng.integers(1, length):] += rng.normal(0, 0.3)
        x += rng.normal(0, rng.uniform(0.0, 0.05), size=length)
        x = x - x.min() + 1.0
        series.append(CapacitySeries(f"gen-{i}", "CC", t.astype(np.int64), x, "synthetic"))
    return Corpus(name, series, "generic", seed, {"n_series": n_series, "length": length})


def corpus_digest(series: list[CapacitySeries]) -> str:
    h = hashlib.sha256()
    for s in series:
        h.update(s.cell_id.encode())
        h.update(s.protocol.encode())
        h.update(s.cycles.tobytes())
        h.update(s.capacity.tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# Windows and scaling


def make_windows(series: CapacitySeries, L: int = LOOKBACK, H: int = HORIZON,
                 stride: int = EVAL_STRIDE) -> list[WindowPair]:
    n = len(series)
    if n < L + H:
        return []
    out = []
    for start in range(0, n - (L + H) + 1, stride):
        x = series.capacity[start:start + L].copy()
        y = series.capacity[start + L:start + L + H].copy()
        out.append(WindowPair(x, y, (series.cell_id, int(series.cycles[start]))))
    return out


def minmax_scale(window) -> tuple[np.ndarray, ScaleParams]:
    """Scale to [0, 1]; a constant window maps to 0.5 everywhere."""
    w = np.asarray(window, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot scale an empty window")
    lo, hi = float(w.min()), float(w.max())
    if hi == lo:
        return np.full_like(w, 0.5), ScaleParams(lo, hi)
    return (w - lo) / (hi - lo), ScaleParams(lo, hi)


def apply_scale(values, params: ScaleParams) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    span = params.max - params.min
    if span == 0:
        return v - params.min + 0.5
    return (v - params.min) / span


def inverse_scale(scaled, params: ScaleParams) -> np.ndarray:
    s = np.asarray(scaled, dtype=np.float64)
    span = params.max - params.min
    if span == 0:
        return s - 0.5 + params.min
    return s * span + params.min


@dataclass
class WindowSet:
    """Stacked scaled windows ready for training or evaluation."""

    x: np.ndarray          # (n, L) float32, scaled by the lookback's min/max
    y: np.ndarray          # (n, H) float32, same scaling
    lo: np.ndarray         # (n,) float64
    hi: np.ndarray         # (n,) float64
    origins: list[tuple[str, int]]
    protocols: list[str]

    def __len__(self):
        return len(self.x)

    def raw_y(self) -> np.ndarray:
        return unscale_rows(self.y, self.lo, self.hi)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(self.x[idx], self.y[idx], self.lo[idx], self.hi[idx],
                         [self.origins[i] for i in idx], [self.protocols[i] for i in idx])


def unscale_rows(scaled, lo, hi) -> np.ndarray:
    scaled = np.asarray(scaled, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)[:, None]
    hi = np.asarray(hi, dtype=np.float64)[:, None]
    span = hi - lo
    flat = span == 0
    return np.where(flat, scaled - 0.5 + lo, scaled * np.where(flat, 1.0, span) + lo)


def build_windows(series_list, L: int = LOOKBACK, H: int = HORIZON,
                  stride: int = EVAL_STRIDE, protocol: str | None = None) -> WindowSet:
    xs, ys, los, his, origins, protos = [], [], [], [], [], []
    for s in series_list:
        if protocol is not None and s.protocol != protocol:
            continue
        for w in make_windows(s, L, H, stride):
            xi, p = minmax_scale(w.input)
            xs.append(xi)
            ys.append(apply_scale(w.target, p))
            los.append(p.min)
            his.append(p.max)
            origins.append(w.origin)
            protos.append(s.protocol)
    if not xs:
        return WindowSet(np.zeros((0, L), np.float32), np.zeros((0, H), np.float32),
                         np.zeros(0), np.zeros(0), [], [])
    return WindowSet(np.asarray(xs, np.float32), np.asarray(ys, np.float32),
                     np.asarray(los), np.asarray(his), origins, protos)
