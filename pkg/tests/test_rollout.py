import numpy as np
import pytest

from battkd import seqdata
from battkd.experts import build_expert
from battkd.rollout import (read_rollout_csv, recursive_forecast, smoothing_diagnostics,
                            write_report_kv, write_rollout_csv)
from battkd.timer import TimerConfig, TimerModel


class ConstantModel:
    step = 96

    def predict(self, x):
        return np.full(np.asarray(x).shape[:-1] + (96,), 0.4, np.float32)


@pytest.mark.parametrize("kind", ["LinearDecomp", "SegRec"])
def test_prefix_property_experts(kind, rng):
    m = build_expert(kind, seed=1)
    ctx = rng.random(96).astype(np.float32)
    f = recursive_forecast(m, ctx, 192)
    assert f.shape == (192,)
    assert f[:96].tobytes() == m.predict(ctx).tobytes()


def test_prefix_property_timer(rng):
    m = TimerModel(seed=2)
    ctx = rng.random((3, 96)).astype(np.float32)
    f = recursive_forecast(m, ctx, 192)
    assert f[:, :96].tobytes() == m.predict(ctx).tobytes()


def test_context_exhausted():
    m = TimerModel(TimerConfig(max_tokens=8), seed=0)
    with pytest.raises(ValueError, match="context window exhausted"):
        recursive_forecast(m, np.zeros(96, np.float32), 192)


def test_bad_horizon():
    with pytest.raises(ValueError):
        recursive_forecast(ConstantModel(), np.zeros(96), 100)


def test_expert_recursion_uses_own_outputs(rng):
    m = build_expert("LinearDecomp", seed=3)
    ctx = rng.random(96).astype(np.float32)
    f = recursive_forecast(m, ctx, 288)
    np.testing.assert_array_equal(f[96:192], m.predict(f[:96]))
    np.testing.assert_array_equal(f[192:], m.predict(f[96:192]))


def test_constant_model():
    f = recursive_forecast(ConstantModel(), np.zeros(96), 192)
    r = smoothing_diagnostics(f)
    assert r.std_first == r.std_second == 0.0
    assert r.flattening_ratio is None
    assert r.mvr_first == r.mvr_second == 0.0


def test_toy_ratio_zero():
    r = smoothing_diagnostics([0, 1, 0, 1, 5, 5, 5, 5], split=4)
    assert r.std_first == pytest.approx(np.sqrt(8 / 9))  # diffs 1, -1, 1
    assert r.std_second == 0.0 and r.flattening_ratio == 0.0
    assert r.mvr_first == pytest.approx(2 / 3)


def test_linear_forecast_ratio_none():
    r = smoothing_diagnostics(np.linspace(1.0, 0.5, 192))
    assert r.flattening_ratio is None


def test_white_noise_ratio_near_one():
    f = np.random.default_rng(0).normal(size=192)
    assert 0.5 <= smoothing_diagnostics(f).flattening_ratio <= 2.0


def test_translation_invariance(rng):
    f = rng.normal(size=192)
    a, b = smoothing_diagnostics(f), smoothing_diagnostics(f + 3.0)
    assert a.mvr_first == b.mvr_first and a.mvr_second == b.mvr_second
    assert a.flattening_ratio == pytest.approx(b.flattening_ratio, rel=1e-12)


def test_split_range():
    with pytest.raises(ValueError):
        smoothing_diagnostics(np.zeros(10), split=9)


def test_csv_and_report(tmp_path, rng):
    truth, pred = rng.random(192), rng.random(192) / 3
    write_rollout_csv(truth, pred, tmp_path / "r.csv")
    t, p = read_rollout_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(t, truth)
    np.testing.assert_array_equal(p, pred)
    write_report_kv(smoothing_diagnostics(np.zeros(192)), tmp_path / "r.txt")
    kv = seqdata.read_kv(tmp_path / "r.txt")
    assert kv["flattening_ratio"] == "" and kv["total_horizon"] == "192"
