import os
from pathlib import Path

import numpy as np
import pytest

from battkd import cli, seqdata
from battkd.config import ConfigError, load_config, parse_text
from battkd.diffcore import load_checkpoint

SMALL = """
# small end-to-end run
data.pool_cells = 2
data.pool_cycles = 300
data.station_cells = 2
data.station_cycles = 400
data.generic_series = 12
data.generic_length = 384
timer.d_model = 16
timer.n_layers = 1
timer.n_heads = 2
timer.d_ff = 32
timer.max_tokens = 12
pretrain.epochs = 1
lora.rank = 2
finetune.epochs = 1
finetune.train_stride = 24
distill.epochs = 1
distill.batch = 16
distill.train_stride = 24
run.kinds = LinearDecomp
run.eval_windows = 3
lime.n_samples = 120
ablate.epochs = 1
ablate.lambdas = 0.0, 0.1
"""

CHAIN = ["synth", "pretrain", "finetune", "distill", "evaluate", "lobo", ["ablate", "--axis",
         "lambda"], "explain", "rollout", "report"]


class TestConfig:
    def test_defaults_and_digest(self):
        a, b = load_config(env={}), load_config(env={})
        assert a.digest() == b.digest()
        assert a.timer.d_model == 64 and a.finetune.train_stride == 4
        assert a.pipeline().distill.alpha == 0.3

    def test_file_env_set_precedence(self, tmp_path):
        f = tmp_path / "c.cfg"
        f.write_text("lora.rank = 4\nrun.seed = 3\n")
        env = {"BATTKD_LORA__RANK": "16", "BATTKD_RUN__WORKERS": "2"}
        cfg = load_config(f, ["lora.rank=2"], env=env)
        assert (cfg.lora.rank, cfg.run.seed, cfg.run.workers) == (2, 3, 2)
        assert load_config(f, env=env).lora.rank == 16

    def test_types(self):
        cfg = load_config(overrides=["lora.alpha=8", "run.kinds=SegRec, PatchAttn",
                                     "timer.temporal_embedding=false", "lime.sigma=1.5"], env={})
        assert cfg.lora.alpha == 8.0 and isinstance(cfg.lora.alpha, float)
        assert cfg.run.kinds == ("SegRec", "PatchAttn")
        assert cfg.timer.temporal_embedding is False
        assert cfg.lime.sigma == 1.5

    def test_text_roundtrip(self, tmp_path):
        cfg = load_config(overrides=["ablate.ranks=2,4", "lime.sigma=0.5"], env={})
        f = tmp_path / "dump.cfg"
        f.write_text(cfg.to_text())
        assert load_config(f, env={}).digest() == cfg.digest()

    @pytest.mark.parametrize("item", ["lora.rnk=4", "nosuch.key=1", "lora.rank=four",
                                      "lora.rank=0", "norank"])
    def test_bad_overrides(self, item):
        with pytest.raises(ConfigError):
            load_config(overrides=[item], env={})

    def test_bad_env_and_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(env={"BATTKD_RANK": "3"})
        with pytest.raises(ConfigError, match=":2:"):
            parse_text("lora.rank = 2\nthis line is wrong\n", "f")
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.cfg", env={})


class TestExitCodes:
    def test_usage(self, capsys):
        with pytest.raises(SystemExit) as e:
            cli.main(["frobnicate"])
        assert e.value.code == 2

    def test_config_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert cli.main(["synth", "--set", "lora.bogus=1"]) == 3
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_input(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert cli.main(["pretrain"]) == 4
        assert cli.main(["ingest", "--csv", "nope.csv", "--name", "x"]) == 4

    def test_checkpoint_version(self, tmp_path, monkeypatch, capsys):
        monkeypatch.chdir(tmp_path)
        assert cli.main(["synth", "--config", str(self._small(tmp_path))]) == 0
        from battkd.timer import TimerConfig, TimerModel
        p = TimerModel(TimerConfig(d_model=16, n_layers=1, n_heads=2, d_ff=32)).save(
            Path("checkpoints/base.btkd"))
        raw = bytearray(p.read_bytes())
        raw[4] = 99  # version field follows the 4-byte magic
        p.write_bytes(bytes(raw))
        assert cli.main(["finetune", "--config", str(self._small(tmp_path))]) == 5

    @staticmethod
    def _small(tmp_path):
        f = tmp_path / "small.cfg"
        f.write_text(SMALL)
        return f


def test_ingest(tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    corpus = seqdata.synthesize_corpus("XJTU-like", 2, 200, seed=1)
    seqdata.save_csv(corpus.series, tmp_path / "cells.csv")
    assert cli.main(["ingest", "--csv", "cells.csv", "--name", "lab"]) == 0
    back = seqdata.load_corpus(Path("data"), "lab")
    assert [s.cell_id for s in back.series] == [s.cell_id for s in corpus.series]
    man = seqdata.read_kv(Path("data/ingest-lab.manifest"))
    assert man["input.cells.csv"] == cli.sha256_file(tmp_path / "cells.csv")


def _run_chain(workdir: Path, monkeypatch):
    workdir.mkdir()
    (workdir / "small.cfg").write_text(SMALL)
    monkeypatch.chdir(workdir)
    for step in CHAIN:
        argv = [step] if isinstance(step, str) else list(step)
        assert cli.main(argv + ["--config", "small.cfg", "--seed", "2"]) == 0, argv
    return {str(p.relative_to(workdir)): p.read_bytes()
            for p in sorted(workdir.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    mp = pytest.MonkeyPatch()
    try:
        base = tmp_path_factory.mktemp("e2e")
        a = _run_chain(base / "a", mp)
        b = _run_chain(base / "b", mp)
    finally:
        mp.undo()
    return base, a, b


class TestEndToEnd:
    def test_bitwise_reproducible(self, two_runs):
        _, a, b = two_runs
        assert sorted(a) == sorted(b)
        diff = [k for k in a if a[k] != b[k]]
        assert diff == []

    def test_artifacts_present(self, two_runs):
        _, a, _ = two_runs
        for name in ["checkpoints/base.btkd", "checkpoints/adapters.btkd",
                     "checkpoints/experts/LinearDecomp-distilled.btkd",
                     "checkpoints/experts/LinearDecomp-vanilla.btkd",
                     "reports/metrics.csv", "reports/lobo.csv", "reports/ablate.csv",
                     "reports/attribution.csv", "reports/rollout.csv", "reports/rollout.svg",
                     "reports/report.md", "data/synth.manifest"]:
            assert name in a, name

    def test_manifest_contents(self, two_runs):
        base, _, _ = two_runs
        root = base / "a"
        man = seqdata.read_kv(root / "checkpoints/pretrain.manifest")
        assert man["seed"] == "2" and man["config.timer.d_model"] == "16"
        assert man["output.base.btkd"] == cli.sha256_file(root / "checkpoints/base.btkd")
        assert len(man["config_hash"]) == 64

    def test_checkpoint_and_csv_roundtrip(self, two_runs):
        base, _, _ = two_runs
        root = base / "a"
        tensors, meta = load_checkpoint(root / "checkpoints/base.btkd")
        from battkd.diffcore import save_checkpoint
        again = save_checkpoint(base / "again.btkd", tensors, meta)
        assert again.read_bytes() == (root / "checkpoints/base.btkd").read_bytes()
        pts = cli.read_ablation(root / "reports/ablate.csv")
        cli.write_ablation(pts, base / "ablate2.csv")
        assert (base / "ablate2.csv").read_bytes() == (root / "reports/ablate.csv").read_bytes()
        assert [p.setting for p in pts] == ["lambda=0", "lambda=0.1"] or len(pts) == 2
        rep = seqdata.read_kv(root / "reports/rollout_report.txt")
        assert rep["total_horizon"] == "192"
        assert np.isfinite(float(rep["std_first"]))
