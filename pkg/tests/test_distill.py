import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from battkd import seqdata
from battkd.diffcore import Parameter, grad_check
from battkd.distill import KDConfig, distill, kd_soft_loss, kd_total_loss, soften, teacher_cache
from battkd.experts import build_expert, supervised_train

TOY_T = np.array([[0.0, math.log(3.0)]], np.float32)
TOY_S = np.zeros((1, 2), np.float32)
TOY_Y = np.array([[0.2, -0.2]], np.float32)


def brute_kd(t, s, T):
    t, s = np.asarray(t, np.float64), np.asarray(s, np.float64)
    p = np.exp(t / T) / np.exp(t / T).sum(-1, keepdims=True)
    q = np.exp(s / T) / np.exp(s / T).sum(-1, keepdims=True)
    return T * T * np.mean(np.sum(p * (np.log(p) - np.log(q)), -1))


class TestToyValues:
    def test_softened_distribution(self):
        np.testing.assert_allclose(soften(TOY_T, 1.0).data, [[0.25, 0.75]], atol=1e-7)

    def test_soft_loss(self):
        assert kd_soft_loss(TOY_T, TOY_S, 1.0).data.item() == pytest.approx(0.1308, abs=1e-4)

    def test_total(self):
        total, soft, hard = kd_total_loss(TOY_S, TOY_T, TOY_Y, 1.0, 0.3)
        assert hard.data.item() == pytest.approx(0.04, abs=1e-7)
        assert total.data.item() == pytest.approx(0.06724, abs=1e-4)

    def test_self_distillation_is_zero(self, rng):
        x = rng.normal(size=(4, 96)).astype(np.float32)
        assert kd_soft_loss(x, x, 2.0).data.item() == 0.0


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, (3, 8), elements=st.floats(-3, 3, width=32)),
       arrays(np.float32, (3, 8), elements=st.floats(-3, 3, width=32)),
       st.sampled_from([0.5, 1.0, 2.0, 4.0]))
def test_soft_loss_matches_brute_force(t, s, T):
    got = kd_soft_loss(t, s, T).data.item()
    assert got == pytest.approx(brute_kd(t, s, T), abs=1e-5)
    assert got >= -1e-6


def test_invalid_inputs():
    with pytest.raises(ValueError):
        kd_soft_loss(np.zeros((1, 3)), np.zeros((1, 4)), 1.0)
    with pytest.raises(ValueError):
        soften(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        KDConfig(temperature=-1.0)
    with pytest.raises(ValueError):
        KDConfig(alpha=1.5)


@pytest.mark.parametrize("seed", range(10))
def test_grad_check(seed):
    rng = np.random.default_rng(seed)
    s = Parameter(rng.normal(size=(2, 96)).astype(np.float32))
    t = rng.normal(size=(2, 96)).astype(np.float32)
    y = rng.normal(size=(2, 96)).astype(np.float32)
    assert grad_check(lambda: kd_total_loss(s, t, y, 2.0, 0.3)[0], [s], seed=seed) < 1e-2


@pytest.fixture(scope="module")
def cccv_windows():
    corpus = seqdata.synthesize_corpus("SJTU-like", 4, 300, seed=3)
    return seqdata.build_windows(corpus.series, stride=24, protocol="CCCV")


class TestDistill:
    def test_rejects_non_cccv(self, small_windows):
        assert "CC" in small_windows.protocols
        with pytest.raises(ValueError, match="non-CCCV"):
            distill(build_expert("LinearDecomp"), build_expert("LinearDecomp"), small_windows)

    def test_rejects_empty(self):
        with pytest.raises(ValueError, match="empty"):
            distill(None, build_expert("LinearDecomp"), seqdata.build_windows([]))

    @pytest.mark.parametrize("kind", ["LinearDecomp", "SegRec"])
    def test_alpha_zero_equals_supervised_bitwise(self, kind, cccv_windows, tiny_timer):
        a, b = build_expert(kind, seed=2), build_expert(kind, seed=2)
        cfg = KDConfig(alpha=0.0, epochs=2, batch=4, lr=1e-3)
        distill(tiny_timer, a, cccv_windows, cfg, seed=7)
        supervised_train(b, cccv_windows, epochs=2, batch=4, lr=1e-3, seed=7)
        for k, v in a.state_dict().items():
            assert v.tobytes() == b.state_dict()[k].tobytes(), k

    def test_teacher_unchanged(self, cccv_windows, tiny_timer):
        before = {k: v.tobytes() for k, v in tiny_timer.state_dict().items()}
        student = build_expert("LinearDecomp")
        hist = distill(tiny_timer, student, cccv_windows, KDConfig(epochs=2, lr=1e-3), seed=1)
        assert {k: v.tobytes() for k, v in tiny_timer.state_dict().items()} == before
        assert student.regime == "distilled"
        for r in hist:
            assert r["total"] == pytest.approx(0.3 * r["soft"] + 0.7 * r["hard"], rel=1e-5)

    def test_cached_teacher_matches(self, cccv_windows, tiny_timer):
        cache = teacher_cache(tiny_timer, cccv_windows)
        a, b = build_expert("SegRec", seed=1), build_expert("SegRec", seed=1)
        cfg = KDConfig(epochs=1, lr=1e-3)
        distill(tiny_timer, a, cccv_windows, cfg, seed=3)
        distill(None, b, cccv_windows, cfg, seed=3, teacher_out=cache)
        np.testing.assert_array_equal(a.predict(cccv_windows.x), b.predict(cccv_windows.x))
