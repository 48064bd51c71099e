"""End-to-end experiment recipes shared by the CLI, notebooks and acceptance tests."""

from __future__ import annotations

import copy
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import seqdata
from .distill import KDConfig, distill, teacher_cache
from .evaluation import MetricReport, evaluate_protocol, evaluate_windows
from .experts import ExpertConfig, build_expert, supervised_train
from .lora import LoraConfig, inject
from .timer import TimerConfig, TimerModel, pretrain
from .train import FinetuneConfig, finetune


@dataclass
class DataConfig:
    pool_cells: int = 6
    pool_cycles: int = 800
    station_cells: int = 8
    station_cycles: int = 1152
    generic_series: int = 600
    generic_length: int = 480
    station_seed_offset: int = 1000


@dataclass
class PretrainConfig:
    epochs: int = 12
    batch: int = 64
    lr: float = 1e-3
    stride: int = 24


@dataclass
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    timer: TimerConfig = field(default_factory=TimerConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    finetune: FinetuneConfig = field(default_factory=lambda: FinetuneConfig(train_stride=4))
    distill: KDConfig = field(default_factory=KDConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)


@dataclass
class Suite:
    generic: seqdata.Corpus
    pool: dict[str, seqdata.Corpus]
    station: seqdata.Corpus


def make_suite(seed: int, cfg: DataConfig | None = None) -> Suite:
    """Generic pretraining curves, the four-family fine-tuning pool, and a held-out
    SJTU-like station (first half CC cells, second half CCCV)."""
    cfg = cfg or DataConfig()
    generic = seqdata.synthesize_generic(cfg.generic_series, cfg.generic_length, seed)
    pool = {fam: seqdata.synthesize_corpus(fam, cfg.pool_cells, cfg.pool_cycles, seed)
            for fam in seqdata.FAMILIES}
    station = seqdata.synthesize_corpus("SJTU-like", cfg.station_cells, cfg.station_cycles,
                                        seed + cfg.station_seed_offset, name="station")
    return Suite(generic, pool, station)


def build_base_teacher(seed: int, suite: Suite, cfg: PipelineConfig, log_every=None):
    model = TimerModel(cfg.timer, seed=seed)
    p = cfg.pretrain
    history = pretrain(model, [suite.generic], epochs=p.epochs, batch=p.batch, lr=p.lr,
                       seed=seed, stride=p.stride, log_every=log_every)
    return model, history


def adapt_teacher(base: TimerModel, corpora, cfg: PipelineConfig, seed: int,
                  lora_cfg: LoraConfig | None = None, ft_cfg: FinetuneConfig | None = None,
                  log_every=None):
    """Copy ``base``, inject adapters and fine-tune them on ``corpora``."""
    model = copy.deepcopy(base)
    inject(model, lora_cfg or cfg.lora, seed=seed)
    history = finetune(model, corpora, ft_cfg or cfg.finetune, seed=seed, log_every=log_every)
    return model, history


def station_windows(suite: Suite, protocol: str, stride: int) -> seqdata.WindowSet:
    return seqdata.build_windows(suite.station.series, stride=stride, protocol=protocol)


# ---------------------------------------------------------------------------
# distilled vs vanilla


def compare_regimes(teacher, suite: Suite, kinds, cfg: PipelineConfig, seed: int,
                    log_every=None):
    """Train each kind twice on station CCCV windows (vanilla: alpha=0 objective path via
    plain MSE; distilled: KD objective) and evaluate both on CC and CCCV."""
    kd = cfg.distill
    train_w = station_windows(suite, "CCCV", kd.train_stride)
    t_out = teacher_cache(teacher, train_w)
    reports, students = [], {}
    for kind in kinds:
        ecfg = replace(cfg.expert, kind=kind)
        vanilla = build_expert(ecfg, seed=seed)
        supervised_train(vanilla, train_w, epochs=kd.epochs, batch=kd.batch, lr=kd.lr,
                         seed=seed, log_every=log_every)
        vanilla.regime = "vanilla"
        student = build_expert(ecfg, seed=seed)
        distill(teacher, student, train_w, kd, seed=seed, teacher_out=t_out,
                log_every=log_every)
        students[(kind, "vanilla")] = vanilla
        students[(kind, "distilled")] = student
        for regime, m in (("vanilla", vanilla), ("distilled", student)):
            for proto in ("CC", "CCCV"):
                reports.append(evaluate_protocol(m, suite.station, proto, model_id=kind,
                                                 regime=regime))
    return reports, students


# ---------------------------------------------------------------------------
# leave one family out


LOBO_VARIANTS = ("full",) + tuple(f"w/o {f}" for f in seqdata.FAMILIES)


def _lobo_job(args):
    base_state, variant, seed, cfg, suite = args
    base = TimerModel(cfg.timer, seed=seed)
    base.load_state_dict(base_state)
    corpora = [c for fam, c in suite.pool.items() if variant != f"w/o {fam}"]
    model, _ = adapt_teacher(base, corpora, cfg, seed)
    rep = evaluate_protocol(model, suite.station, None, model_id=variant, regime="finetuned")
    return variant, rep


def run_lobo(seed: int, cfg: PipelineConfig | None = None, *, workers: int = 1,
             suite: Suite | None = None, base: TimerModel | None = None) -> list[MetricReport]:
    """Full pool plus each leave-one-family-out variant, evaluated on the station."""
    cfg = cfg or PipelineConfig()
    suite = suite or make_suite(seed, cfg.data)
    if base is None:
        base, _ = build_base_teacher(seed, suite, cfg)
    state = base.state_dict()
    jobs = [(state, v, seed, cfg, suite) for v in LOBO_VARIANTS]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = dict(ex.map(_lobo_job, jobs))
    else:
        results = dict(map(_lobo_job, jobs))
    return [results[v] for v in LOBO_VARIANTS]


# ---------------------------------------------------------------------------
# ablation grid

POSITION_CODES = {"q": "q_proj", "k": "k_proj", "v": "v_proj"}


@dataclass
class AblationPoint:
    axis: str
    setting: str
    targets: tuple[str, ...]
    rank: int
    alpha: float
    lambda_trend: float
    mae: float = float("nan")
    rmse: float = float("nan")
    mvr: float = float("nan")


def ablation_grid(cfg: PipelineConfig, positions, ranks, alphas, lambdas) -> list[AblationPoint]:
    """One-factor sweeps around the defaults: injection positions, (r, alpha), lambda."""
    lo, ft = cfg.lora, cfg.finetune
    pts = []
    for code in positions:
        targets = tuple(POSITION_CODES[c] for c in code)
        pts.append(AblationPoint("positions", code, targets, lo.rank, lo.alpha, ft.lambda_trend))
    for r in ranks:
        for a in alphas:
            pts.append(AblationPoint("rank_alpha", f"r={r},alpha={a:g}", lo.targets, int(r), float(a),
                                     ft.lambda_trend))
    for lam in lambdas:
        pts.append(AblationPoint("lambda", f"lambda={lam:g}", lo.targets, lo.rank, lo.alpha,
                                 float(lam)))
    return pts


def _ablation_job(args):
    base_state, pt, seed, cfg, suite, epochs = args
    base = TimerModel(cfg.timer, seed=seed)
    base.load_state_dict(base_state)
    lora_cfg = replace(cfg.lora, targets=pt.targets, rank=pt.rank, alpha=pt.alpha)
    ft_cfg = replace(cfg.finetune, lambda_trend=pt.lambda_trend, epochs=epochs)
    model, _ = adapt_teacher(base, list(suite.pool.values()), cfg, seed, lora_cfg, ft_cfg)
    rep = evaluate_protocol(model, suite.station, None, model_id=pt.setting, regime="finetuned")
    return replace(pt, mae=rep.mae, rmse=rep.rmse, mvr=rep.mvr)


def run_ablation(seed: int, cfg: PipelineConfig, points, *, epochs: int = 3, workers: int = 1,
                 suite: Suite | None = None, base: TimerModel | None = None) -> list[AblationPoint]:
    suite = suite or make_suite(seed, cfg.data)
    if base is None:
        base, _ = build_base_teacher(seed, suite, cfg)
    state = base.state_dict()
    jobs = [(state, pt, seed, cfg, suite, epochs) for pt in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_ablation_job, jobs))
    return list(map(_ablation_job, jobs))


def held_out_windows(suite: Suite, n: int = 20) -> seqdata.WindowSet:
    w = seqdata.build_windows(suite.station.series)
    return w.subset(np.arange(min(n, len(w))))


def evaluate_teacher(model, suite: Suite, label="teacher", regime="finetuned"):
    return [evaluate_protocol(model, suite.station, p, model_id=label, regime=regime)
            for p in ("CC", "CCCV")]


__all__ = [
    "DataConfig", "PretrainConfig", "PipelineConfig", "Suite", "make_suite",
    "build_base_teacher", "adapt_teacher", "compare_regimes", "run_lobo", "LOBO_VARIANTS",
    "held_out_windows", "evaluate_teacher", "evaluate_windows", "AblationPoint", "ablation_grid",
    "run_ablation", "POSITION_CODES",
]
