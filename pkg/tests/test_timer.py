import numpy as np
import pytest

from battkd import seqdata
from battkd.diffcore import grad_check
from battkd.timer import (TimerConfig, TimerModel, detokenize, generative_loss, pretrain,
                          tokenize)

from conftest import TINY_TIMER


class TestTokenize:
    def test_counts(self):
        assert tokenize(np.arange(96.0), 24).shape == (4, 24)
        assert tokenize(np.arange(96.0), 96).shape == (1, 96)
        with pytest.raises(ValueError, match="divisible"):
            tokenize(np.arange(100.0), 24)

    def test_roundtrip(self, rng):
        x = rng.normal(size=(3, 120))
        np.testing.assert_array_equal(detokenize(tokenize(x, 24)), x)
        np.testing.assert_array_equal(tokenize(np.arange(48.0), 24)[1], np.arange(24.0, 48.0))


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            TimerConfig(d_model=10, n_heads=4)
        with pytest.raises(ValueError):
            TimerConfig(segment=0)

    def test_default_parameter_names(self):
        m = TimerModel(seed=0)
        names = set(m.named_parameters())
        for i in range(2):
            for proj in ("q_proj", "k_proj", "v_proj", "o_proj", "ff1", "ff2"):
                assert f"block{i}.{proj}.weight" in names
        assert m.W_e.shape == (64, 24) and m.W_d.shape == (64, 24) and m.TE.shape == (16, 64)
        assert m.projection("block1.k_proj") is m.blocks[1].k_proj


class TestForward:
    def test_shape_and_determinism(self, tiny_timer, rng):
        for n in (1, 3, 12):
            tok = rng.normal(size=(2, n, 24)).astype(np.float32)
            a = tiny_timer(tok).data
            assert a.shape == (2, n, 24)
            np.testing.assert_array_equal(a, tiny_timer(tok).data)

    def test_too_many_tokens(self, tiny_timer):
        with pytest.raises(ValueError, match="max_tokens"):
            tiny_timer(np.zeros((1, 13, 24), np.float32))

    @pytest.mark.parametrize("j", range(6))
    def test_causality_bitwise(self, tiny_timer, rng, j):
        tok = rng.normal(size=(1, 6, 24)).astype(np.float32)
        base = tiny_timer(tok).data
        pert = tok.copy()
        pert[0, j] += rng.normal(size=24).astype(np.float32) * 3
        out = tiny_timer(pert).data
        np.testing.assert_array_equal(out[:, :j], base[:, :j])
        if j < 5:
            assert not np.array_equal(out[:, j:], base[:, j:])

    def test_forecast_one_token_is_last_forward_row(self, tiny_timer, rng):
        ctx = rng.random(96).astype(np.float32)
        last = tiny_timer(tokenize(ctx, 24)).data[0, -1]
        np.testing.assert_array_equal(tiny_timer.forecast(ctx, 1), last)

    def test_forecast_lengths(self, rng):
        m = TimerModel(TimerConfig(d_model=16, n_heads=2, d_ff=32, n_layers=1), seed=1)
        ctx = rng.random(96).astype(np.float32)
        assert m.forecast(ctx, 4).shape == (96,)
        assert m.forecast(ctx, 0).shape == (0,)
        assert m.forecast(ctx, 8).shape == (192,)
        assert m.predict(np.stack([ctx, ctx])).shape == (2, 96)
        with pytest.raises(ValueError, match="max_tokens"):
            m.forecast(ctx, 13)

    def test_temporal_embedding_flag(self):
        m = TimerModel(TimerConfig(d_model=16, n_heads=2, d_ff=32, temporal_embedding=False))
        assert not m.TE.trainable
        x = np.random.default_rng(0).random((1, 2, 24)).astype(np.float32)
        before = m(x).data
        m.TE.data[:] = 5.0
        np.testing.assert_array_equal(m(x).data, before)


class TestLoss:
    def test_needs_two_tokens(self, tiny_timer):
        with pytest.raises(ValueError):
            generative_loss(tiny_timer, np.zeros((1, 1, 24), np.float32))

    def test_hand_computed_two_token_case(self, tiny_timer, rng):
        tok = rng.normal(size=(1, 2, 24)).astype(np.float32)
        pred = tiny_timer(tok).data
        expected = np.mean((pred[0, 0].astype(np.float64) - tok[0, 1]) ** 2)
        assert abs(float(generative_loss(tiny_timer, tok).data) - expected) < 1e-6
        assert float(generative_loss(tiny_timer, tok).data) >= 0

    def test_copy_model_on_constant_series_is_zero(self):
        class Copy:
            def forward(self, tokens):
                return tokens

        tok = np.full((2, 4, 24), 0.7, np.float32)
        assert float(generative_loss(Copy(), tok).data) == 0.0

    @pytest.mark.parametrize("seed", range(3))
    def test_grad_check(self, seed):
        m = TimerModel(TimerConfig(segment=8, d_model=8, n_layers=1, n_heads=2, d_ff=16,
                                   max_tokens=4), seed=seed)
        tok = np.random.default_rng(seed).normal(size=(2, 4, 8)).astype(np.float32)
        assert grad_check(lambda: generative_loss(m, tok), m.parameters(), max_coords=6,
                          seed=seed) < 1e-2


@pytest.fixture(scope="module")
def corpus():
    return seqdata.synthesize_generic(50, 240, seed=0)


class TestPretrain:
    def test_loss_decreases(self, corpus):
        m = TimerModel(TINY_TIMER, seed=0)
        hist = pretrain(m, [corpus], epochs=3, batch=32, lr=3e-3, seed=0, stride=48, n_tokens=6)
        assert hist[-1]["loss"] < hist[0]["loss"]

    def test_lr_zero_keeps_parameters(self, corpus):
        m = TimerModel(TINY_TIMER, seed=0)
        before = m.digest()
        pretrain(m, [corpus], epochs=1, batch=32, lr=0.0, seed=0, stride=96, n_tokens=6)
        assert m.digest() == before

    def test_deterministic_and_checkpoint_roundtrip(self, corpus, tmp_path):
        def run():
            m = TimerModel(TINY_TIMER, seed=4)
            pretrain(m, [corpus], epochs=1, batch=32, lr=1e-3, seed=4, stride=96, n_tokens=6)
            return m

        a, b = run(), run()
        assert a.digest() == b.digest()
        a.save(tmp_path / "t.btkd")
        c = TimerModel.load(tmp_path / "t.btkd")
        assert c.cfg == a.cfg and c.digest() == a.digest()

    def test_empty_corpus(self):
        short = seqdata.Corpus("s", [seqdata.CapacitySeries("a", "CC", np.arange(50),
                                                              np.ones(50))], "generic")
        with pytest.raises(ValueError, match="empty"):
            pretrain(TimerModel(TINY_TIMER), [short], epochs=1)
