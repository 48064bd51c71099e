"""Command-line front end: ``battkd <subcommand> [--config FILE] [--set section.key=value]``.

Exit codes: 0 success, 1 unexpected failure, 2 usage error, 3 config error,
4 missing input, 5 checkpoint version mismatch.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__, evaluation, explain, pipeline, rollout, seqdata, svg
from .config import ConfigError, RunConfig, load_config
from .diffcore import CheckpointVersionError
from .distill import KDConfig
from .experts import load_expert
from .lora import load_adapters, save_adapters
from .timer import TimerModel
from .train import write_history

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_VERSION = 0, 1, 2, 3, 4, 5

POOL_NAMES = {fam: fam.split("-")[0].lower() for fam in seqdata.FAMILIES}


class MissingInput(FileNotFoundError):
    pass


# ---------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, cfg: RunConfig, inputs=(), outputs=()):
    """Key-value manifest: command, version, seed, config hash and full config, file hashes."""
    meta = {"command": command, "version": __version__, "seed": cfg.run.seed,
            "config_hash": cfg.digest()}
    for k, v in cfg.items():
        meta[f"config.{k}"] = cfg_text_value(v)
    for p in inputs:
        meta[f"input.{Path(p).name}"] = sha256_file(p)
    for p in outputs:
        meta[f"output.{Path(p).name}"] = sha256_file(p)
    seqdata.write_kv(path, meta)
    return Path(path)


def cfg_text_value(v):
    from .config import format_value
    return format_value(v)


def _need(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"missing input: {path}")
    return path


def _dirs(cfg):
    r = cfg.run
    return Path(r.data_dir), Path(r.ckpt_dir), Path(r.report_dir)


def load_suite(cfg) -> tuple[pipeline.Suite, list[Path]]:
    data_dir, _, _ = _dirs(cfg)
    names = ["generic", *POOL_NAMES.values(), "station"]
    files = [_need(data_dir / f"{n}.csv") for n in names]
    for n in names:
        _need(data_dir / f"{n}.manifest")
    pool = {fam: seqdata.load_corpus(data_dir, n) for fam, n in POOL_NAMES.items()}
    suite = pipeline.Suite(seqdata.load_corpus(data_dir, "generic"), pool,
                           seqdata.load_corpus(data_dir, "station"))
    return suite, files


def load_teacher(cfg, adapters=True):
    _, ckpt, _ = _dirs(cfg)
    base_path = _need(ckpt / "base.btkd")
    model = TimerModel.load(base_path)
    inputs = [base_path]
    if adapters:
        ad = _need(ckpt / "adapters.btkd")
        load_adapters(model, ad, seed=cfg.run.seed)
        inputs.append(ad)
    model.eval()
    return model, inputs


def expert_path(cfg, kind, regime) -> Path:
    return _dirs(cfg)[1] / "experts" / f"{kind}-{regime}.btkd"


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg, args):
    data_dir, _, _ = _dirs(cfg)
    suite = pipeline.make_suite(cfg.run.seed, cfg.data)
    outs = [seqdata.save_corpus(c, data_dir)
            for c in (suite.generic, *suite.pool.values(), suite.station)]
    write_manifest(data_dir / "synth.manifest", "synth", cfg, outputs=outs)
    print(f"wrote {len(outs)} corpora to {data_dir}")


def cmd_ingest(cfg, args):
    data_dir, _, _ = _dirs(cfg)
    src = _need(args.csv)
    series = seqdata.load_csv(src)
    corpus = seqdata.Corpus(args.name, series, args.family, None, {"ingested_from": src.name})
    out = seqdata.save_corpus(corpus, data_dir)
    write_manifest(data_dir / f"ingest-{args.name}.manifest", "ingest", cfg, inputs=[src],
                   outputs=[out])
    print(f"ingested {len(series)} series as {out}")


def cmd_pretrain(cfg, args):
    _, ckpt, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    pc = cfg.pipeline()
    model, hist = pipeline.build_base_teacher(cfg.run.seed, suite, pc, log_every=args.log_every)
    out = model.save(ckpt / "base.btkd", {"seed": cfg.run.seed})
    h = write_history(hist, rep / "pretrain_history.csv", columns=("epoch", "loss"))
    write_manifest(ckpt / "pretrain.manifest", "pretrain", cfg, inputs, [out, h])
    print(f"base teacher -> {out}")


def cmd_finetune(cfg, args):
    _, ckpt, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    base, base_in = load_teacher(cfg, adapters=False)
    corpora = [c for fam, c in suite.pool.items() if fam not in (args.exclude or [])]
    model, hist = pipeline.adapt_teacher(base, corpora, cfg.pipeline(), cfg.run.seed,
                                         log_every=args.log_every)
    out = save_adapters(model, ckpt / "adapters.btkd", {"seed": cfg.run.seed})
    h = write_history(hist, rep / "finetune_history.csv")
    write_manifest(ckpt / "finetune.manifest", "finetune", cfg, inputs + base_in, [out, h])
    print(f"adapters -> {out}")


def cmd_distill(cfg, args):
    _, ckpt, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    teacher, t_in = load_teacher(cfg)
    reports, students = pipeline.compare_regimes(teacher, suite, cfg.run.kinds, cfg.pipeline(),
                                                 cfg.run.seed, log_every=args.log_every)
    outs = []
    for (kind, regime), m in students.items():
        p = expert_path(cfg, kind, regime)
        p.parent.mkdir(parents=True, exist_ok=True)
        outs.append(m.save(p, {"regime": regime, "seed": cfg.run.seed,
                               **{f"distill.{k}": v for k, v in asdict(cfg.distill).items()}}))
    m = rep / "distill_metrics.csv"
    evaluation.write_reports(reports, m)
    write_manifest(ckpt / "distill.manifest", "distill", cfg, inputs + t_in, outs + [m])
    print(evaluation.comparison_table(reports), end="")


def _methods(cfg):
    """Teacher plus every expert checkpoint present, in a fixed order."""
    teacher, inputs = load_teacher(cfg)
    methods = [("teacher", "finetuned", teacher)]
    for kind in cfg.run.kinds:
        for regime in ("vanilla", "distilled"):
            p = expert_path(cfg, kind, regime)
            if p.exists():
                methods.append((kind, regime, load_expert(p)[0]))
                inputs.append(p)
    return methods, inputs


def cmd_evaluate(cfg, args):
    _, _, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    methods, m_in = _methods(cfg)
    reports = []
    for name, regime, model in methods:
        for proto in ("CC", "CCCV"):
            reports.append(evaluation.evaluate_protocol(model, suite.station, proto,
                                                        model_id=name, regime=regime))
    outs = [rep / "metrics.csv", rep / "comparison.md"]
    evaluation.write_reports(reports, outs[0])
    outs[1].write_text(evaluation.comparison_table(reports))
    if len(methods) >= 2:
        per_cell = [evaluation.per_cell_mae(m, suite.station) for _, _, m in methods]
        cells = list(per_cell[0])
        if len(cells) >= 2:
            table = evaluation.friedman([[pc[c] for c in cells] for pc in per_cell],
                                        [f"{n}/{r}" for n, r, _ in methods], cells)
            evaluation.write_rank_table(table, rep / "ranking.csv")
            outs.append(rep / "ranking.csv")
    # teacher predictions for the pred-vs-truth scatter
    w = seqdata.build_windows(suite.station.series)
    pred = evaluation.forecast_windows(methods[0][2], w)
    outs.append(write_predictions(w.raw_y(), pred, rep / "predictions.csv"))
    write_manifest(rep / "evaluate.manifest", "evaluate", cfg, inputs + m_in, outs)
    print(evaluation.comparison_table(reports), end="")


def write_predictions(truth, pred, path):
    import csv
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window", "step", "truth", "prediction"])
        for i, (t, p) in enumerate(zip(truth, pred)):
            for k, (a, b) in enumerate(zip(t, p), start=1):
                w.writerow([i, k, repr(float(a)), repr(float(b))])
    return path


def read_predictions(path):
    import csv
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    n = len({r["window"] for r in rows})
    shape = (n, len(rows) // n) if n else (0, 0)
    return (np.array([float(r["truth"]) for r in rows]).reshape(shape),
            np.array([float(r["prediction"]) for r in rows]).reshape(shape))


def cmd_lobo(cfg, args):
    _, _, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    base, b_in = load_teacher(cfg, adapters=False)
    reports = pipeline.run_lobo(cfg.run.seed, cfg.pipeline(), workers=cfg.run.workers,
                                suite=suite, base=base)
    out = rep / "lobo.csv"
    evaluation.write_reports(reports, out)
    write_manifest(rep / "lobo.manifest", "lobo", cfg, inputs + b_in, [out])
    print(evaluation.comparison_table(reports), end="")


ABLATION_COLUMNS = ("axis", "setting", "targets", "rank", "alpha", "lambda_trend", "mae", "rmse",
                    "mvr")


def write_ablation(points, path):
    import csv
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for p in points:
            w.writerow([p.axis, p.setting, "+".join(p.targets), p.rank, repr(p.alpha),
                        repr(p.lambda_trend), repr(p.mae), repr(p.rmse), repr(p.mvr)])
    return path


def read_ablation(path) -> list[pipeline.AblationPoint]:
    import csv
    with Path(path).open(newline="") as fh:
        return [pipeline.AblationPoint(r["axis"], r["setting"], tuple(r["targets"].split("+")),
                                       int(r["rank"]), float(r["alpha"]), float(r["lambda_trend"]),
                                       float(r["mae"]), float(r["rmse"]), float(r["mvr"]))
                for r in csv.DictReader(fh)]


def cmd_ablate(cfg, args):
    _, _, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    base, b_in = load_teacher(cfg, adapters=False)
    a = cfg.ablate
    axes = set(args.axis or ("positions", "rank_alpha", "lambda"))
    pts = [p for p in pipeline.ablation_grid(cfg.pipeline(), a.positions, a.ranks, a.alphas,
                                             a.lambdas) if p.axis in axes]
    res = pipeline.run_ablation(cfg.run.seed, cfg.pipeline(), pts, epochs=a.epochs,
                                workers=cfg.run.workers, suite=suite, base=base)
    out = write_ablation(res, rep / "ablate.csv")
    write_manifest(rep / "ablate.manifest", "ablate", cfg, inputs + b_in, [out])
    for p in res:
        print(f"{p.axis:10s} {p.setting:18s} MAE {p.mae:.4f} RMSE {p.rmse:.4f} MVR {p.mvr:.3f}")


def cmd_explain(cfg, args):
    _, _, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    model, m_in = load_teacher(cfg)
    windows = pipeline.held_out_windows(suite, cfg.run.eval_windows)
    lime_cfg = replace(cfg.lime, seed=cfg.run.seed)
    att = explain.attribute_model(model, windows, lime_cfg)
    outs = [rep / "attribution.csv", rep / "attribution_summary.csv", rep / "attribution.svg"]
    explain.write_attribution_csv(att, outs[0])
    explain.write_summary_csv(att.summary(), outs[1])
    svg.heatmap(att.coef, outs[2], title="LIME attributions (teacher)")
    write_manifest(rep / "explain.manifest", "explain", cfg, inputs + m_in, outs)
    r2 = att.r2[~np.isnan(att.r2)]
    print(f"{len(att)} windows, median surrogate R2 {np.median(r2) if r2.size else float('nan'):.3f}")


def rollout_case(model, suite, total_h):
    """First station cell long enough for lookback + total_h: scaled context, raw truth/pred."""
    L = seqdata.LOOKBACK
    for s in suite.station.series:
        if len(s.capacity) >= L + total_h:
            ctx = s.capacity[:L]
            x, p = seqdata.minmax_scale(ctx)
            pred = seqdata.inverse_scale(rollout.recursive_forecast(model, x, total_h), p)
            return s.cell_id, ctx, s.capacity[L:L + total_h], pred
    raise ValueError(f"no station series covers {L + total_h} cycles")


def cmd_rollout(cfg, args):
    _, _, rep = _dirs(cfg)
    suite, inputs = load_suite(cfg)
    model, m_in = load_teacher(cfg)
    H = cfg.run.rollout_horizon
    cell, ctx, truth, pred = rollout_case(model, suite, H)
    report = rollout.smoothing_diagnostics(pred, seqdata.HORIZON)
    outs = [rep / "rollout.csv", rep / "rollout_report.txt", rep / "rollout.svg"]
    rollout.write_rollout_csv(truth, pred, outs[0])
    rollout.write_report_kv(report, outs[1])
    svg.line_chart({"truth": truth, "prediction": pred}, outs[2], marker=seqdata.HORIZON,
                   title=f"{H}-step recursive forecast, {cell}", ylabel="capacity (Ah)")
    write_manifest(rep / "rollout.manifest", "rollout", cfg, inputs + m_in, outs)
    print(report)


def cmd_report(cfg, args):
    _, _, rep = _dirs(cfg)
    sections, outs = [], []
    if (rep / "metrics.csv").exists():
        sections.append("## Station metrics\n\n" +
                        evaluation.comparison_table(evaluation.read_reports(rep / "metrics.csv")))
    if (rep / "distill_metrics.csv").exists():
        sections.append("## Vanilla vs distilled\n\n" + evaluation.comparison_table(
            evaluation.read_reports(rep / "distill_metrics.csv")))
    if (rep / "predictions.csv").exists():
        t, p = read_predictions(rep / "predictions.csv")
        outs.append(svg.scatter(t, p, rep / "scatter.svg", title="Teacher: prediction vs truth"))
        sections.append("![scatter](scatter.svg)")
    if (rep / "lobo.csv").exists():
        lobo = evaluation.read_reports(rep / "lobo.csv")
        outs.append(svg.bar_chart([r.model for r in lobo], [r.mae for r in lobo],
                                  rep / "lobo.svg", title="Leave one family out", ylabel="MAE"))
        sections.append("## Leave one family out\n\n" + evaluation.comparison_table(lobo) +
                        "\n![lobo](lobo.svg)")
    if (rep / "ablate.csv").exists():
        lines = ["| axis | setting | MAE | RMSE | MVR |", "|---|---|---|---|---|"]
        lines += [f"| {p.axis} | {p.setting} | {p.mae:.4f} | {p.rmse:.4f} | {p.mvr:.3f} |"
                  for p in read_ablation(rep / "ablate.csv")]
        sections.append("## Ablation (3-epoch grid)\n\n" + "\n".join(lines) + "\n")
    if (rep / "attribution.csv").exists():
        att = explain.read_attribution_csv(rep / "attribution.csv")
        outs.append(svg.heatmap(att.coef, rep / "attribution.svg", title="LIME attributions"))
        outs.append(svg.line_chart({"mean |w|": att.summary()}, rep / "attribution_summary.svg",
                                   xlabel="lookback position", title="Position importance"))
        sections.append("## Attributions\n\n![heatmap](attribution.svg)\n\n"
                        "![summary](attribution_summary.svg)")
    if (rep / "rollout.csv").exists():
        t, p = rollout.read_rollout_csv(rep / "rollout.csv")
        outs.append(svg.line_chart({"truth": t, "prediction": p}, rep / "rollout.svg",
                                   marker=seqdata.HORIZON, title="Recursive forecast",
                                   ylabel="capacity (Ah)"))
        kv = seqdata.read_kv(rep / "rollout_report.txt") if (rep / "rollout_report.txt").exists() else {}
        body = "\n".join(f"- {k}: {v if v != '' else 'n/a'}" for k, v in kv.items())
        sections.append("## Long-horizon rollout\n\n![rollout](rollout.svg)\n\n" + body + "\n")
    if not sections:
        raise MissingInput(f"nothing to report in {rep}; run evaluate/lobo/explain/rollout first")
    md = rep / "report.md"
    md.write_text(f"# Run report (seed {cfg.run.seed})\n\n" + "\n\n".join(sections) + "\n")
    outs.append(md)
    write_manifest(rep / "report.manifest", "report", cfg, outputs=outs)
    print(f"report -> {md}")


COMMANDS = {
    "synth": (cmd_synth, "generate the synthetic corpora"),
    "ingest": (cmd_ingest, "validate and import a capacity CSV"),
    "pretrain": (cmd_pretrain, "generic pretraining of the base teacher"),
    "finetune": (cmd_finetune, "LoRA fine-tuning on the family pool"),
    "distill": (cmd_distill, "train vanilla and distilled students"),
    "evaluate": (cmd_evaluate, "station metrics, ranking and predictions"),
    "lobo": (cmd_lobo, "leave-one-family-out fine-tuning runs"),
    "ablate": (cmd_ablate, "LoRA position, rank/alpha and lambda sweeps"),
    "explain": (cmd_explain, "LIME attributions for held-out windows"),
    "rollout": (cmd_rollout, "long-horizon recursive forecast and diagnostics"),
    "report": (cmd_report, "render tables and SVG figures"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="battkd", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="flat key-value config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--seed", type=int, help="shorthand for --set run.seed=N")
        if name in ("pretrain", "finetune", "distill"):
            p.add_argument("--log-every", type=int, default=None, help="print progress every N epochs")
        if name == "ingest":
            p.add_argument("--csv", required=True, type=Path)
            p.add_argument("--name", required=True)
            p.add_argument("--family", default="custom")
        if name == "finetune":
            p.add_argument("--exclude", action="append", choices=seqdata.FAMILIES,
                           help="leave a family out of the pool")
        if name == "ablate":
            p.add_argument("--axis", action="append", choices=("positions", "rank_alpha", "lambda"))
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointVersionError as e:
        print(f"checkpoint version mismatch: {e}", file=sys.stderr)
        return EXIT_VERSION
    except FileNotFoundError as e:
        print(f"missing input: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:  # noqa: BLE001 - report and map to a nonzero exit
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
