import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from battkd import diffcore as dc
from battkd.diffcore import Parameter, ShapeError, Tensor, grad_check


def P(rng, *shape, scale=1.0, name="p"):
    return Parameter((rng.standard_normal(shape) * scale).astype(np.float32), name=name)


class TestPrimitives:
    def test_examples(self):
        assert dc.sigmoid(Tensor([0.0])).data[0] == 0.5
        np.testing.assert_array_equal(dc.softmax(Tensor(np.zeros(4))).data, [0.25] * 4)
        p = dc.softmax(Tensor(np.array([0.3, -1.0, 2.0]))).data
        assert dc.kl_div(p, p).data == 0.0

    def test_softmax_toy(self):
        out = dc.softmax(Tensor(np.array([0.0, np.log(3.0)]))).data
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-7)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float32, (3, 7), elements=st.floats(-30, 30, width=32)),
           st.floats(-50, 50, width=32))
    def test_softmax_sums_and_shift(self, x, c):
        s = dc.softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)
        # the shift itself rounds in float32, so allow a few ulps of the logits
        np.testing.assert_allclose(dc.softmax(Tensor(x + np.float32(c))).data, s, atol=2e-5)

    def test_softmax_large_logits_stable(self):
        s = dc.softmax(Tensor(np.array([1000.0, 1000.0], np.float32))).data
        np.testing.assert_array_equal(s, [0.5, 0.5])

    def test_sigmoid_extremes_finite(self):
        s = dc.sigmoid(Tensor(np.array([-200.0, 200.0], np.float32))).data
        assert np.all(np.isfinite(s)) and s[0] < 1e-30 and s[1] == 1.0

    def test_shape_errors_name_op_and_shapes(self):
        with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(4, 5\)"):
            dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
        with pytest.raises(ShapeError, match="add"):
            dc.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))
        with pytest.raises(ShapeError, match="mse"):
            dc.mse(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_forward_deterministic(self, rng):
        x = rng.standard_normal((4, 6)).astype(np.float32)
        w = rng.standard_normal((5, 6)).astype(np.float32)
        a = dc.gelu(dc.linear(Tensor(x), Tensor(w))).data
        b = dc.gelu(dc.linear(Tensor(x), Tensor(w))).data
        np.testing.assert_array_equal(a, b)

    def test_no_grad_records_nothing(self, rng):
        p = P(rng, 3)
        with dc.no_grad():
            out = dc.mul(p, 2.0)
        assert not out.requires_grad and out._parents == ()

    def test_gradients_accumulate_over_reuse(self):
        p = Parameter(np.array([2.0], np.float32))
        dc.add(dc.mul(p, p), p).backward()
        assert p.grad[0] == 5.0


ACTIVATIONS = {"relu": dc.relu, "sigmoid": dc.sigmoid, "tanh": dc.tanh, "gelu": dc.gelu,
               "exp": dc.exp}


@pytest.mark.parametrize("seed", range(10))
class TestGradients:
    def test_elementwise(self, seed):
        rng = np.random.default_rng(seed)
        a, b = P(rng, 3, 4, name="a"), P(rng, 4, name="b")
        for name, f in ACTIVATIONS.items():
            if name == "relu":
                a.data = np.where(np.abs(a.data) < 0.05, 0.3, a.data).astype(np.float32)
            fn = lambda f=f: dc.mean(dc.mul(f(dc.add(a, b)), dc.sub(a, b)))
            assert grad_check(fn, [a, b]) < 1e-2, name

    def test_matmul_linear_softmax_layernorm(self, seed):
        rng = np.random.default_rng(seed)
        x = P(rng, 2, 3, 5, name="x")
        w, bias = P(rng, 4, 5, name="w"), P(rng, 4, name="bias")
        g, be = P(rng, 4, name="g"), P(rng, 4, name="be")
        t = Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32))

        def fn():
            h = dc.layer_norm(dc.linear(x, w, bias), g, be)
            return dc.mse(dc.softmax(h, axis=-1), t)

        assert grad_check(fn, [x, w, bias, g, be]) < 1e-2

    def test_batched_matmul_reshape_transpose_concat_getitem(self, seed):
        rng = np.random.default_rng(seed)
        a, b = P(rng, 2, 3, 4, name="a"), P(rng, 2, 4, 3, name="b")

        def fn():
            m = dc.matmul(a, b)                       # (2, 3, 3)
            m = dc.concat([m, dc.transpose(m, (0, 2, 1))], axis=1)
            m = dc.reshape(m[:, 1:5, :], (2, 12))
            return dc.tsum(dc.mul(m, m)) * 0.01

        assert grad_check(fn, [a, b]) < 1e-2

    def test_kl_log_clamp(self, seed):
        rng = np.random.default_rng(seed)
        lp, lq = P(rng, 3, 6, name="lp"), P(rng, 3, 6, name="lq")

        def fn():
            return dc.mean(dc.kl_div(dc.softmax(lp), dc.softmax(lq)))

        assert grad_check(fn, [lp, lq]) < 1e-2

    def test_two_layer_network(self, seed):
        rng = np.random.default_rng(seed)
        w1, b1 = P(rng, 8, 5, scale=0.5, name="w1"), P(rng, 8, name="b1")
        w2, b2 = P(rng, 2, 8, scale=0.5, name="w2"), P(rng, 2, name="b2")
        x = rng.standard_normal((6, 5)).astype(np.float32)
        y = rng.standard_normal((6, 2)).astype(np.float32)
        fn = lambda: dc.mse(dc.linear(dc.tanh(dc.linear(x, w1, b1)), w2, b2), y)
        assert grad_check(fn, [w1, b1, w2, b2]) < 1e-2


class TestGradCheck:
    def test_quadratic(self):
        x = Parameter(np.array([3.0], np.float32))
        dc.mul(x, x).backward()
        assert x.grad[0] == 6.0
        x.zero_grad()
        assert grad_check(lambda: dc.mul(x, x), [x]) < 1e-6

    def test_frozen_parameter_gets_zero_grad(self, rng):
        a = P(rng, 3)
        frozen = Parameter(np.ones(3, np.float32), trainable=False)
        dc.tsum(dc.mul(a, frozen)).backward()
        np.testing.assert_array_equal(frozen.grad, 0)
        assert grad_check(lambda: dc.tsum(dc.mul(a, frozen)), [a, frozen]) < 1e-6

    def test_detects_wrong_gradient(self, rng):
        from battkd.diffcore.tensor import _make
        a = P(rng, 4)

        def wrong():
            # forward exp, backward twice the true derivative
            out = _make(np.exp(a.data), (a,), "bad_exp", lambda g: (2 * g * np.exp(a.data),))
            return dc.tsum(out)

        assert grad_check(wrong, [a]) > 0.1


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = Parameter(np.array([1.5, -2.0], np.float32))
        st_ = dc.AdamState(lr=0.1)
        dc.adam_step(st_, [p])
        np.testing.assert_array_equal(p.data, [1.5, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([0.0], np.float32))
        p.grad[:] = 1.0
        dc.adam_step(dc.AdamState(lr=1e-3), [p])
        # m_hat = 1, v_hat = 1 -> step lr / (1 + eps)
        np.testing.assert_allclose(p.data, [-1e-3 / (1 + 1e-8)], rtol=1e-6)
        assert p.grad[0] == 0.0

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(0)
            p = P(rng, 5)
            st_ = dc.AdamState(lr=0.01)
            for _ in range(3):
                dc.tsum(dc.mul(p, p)).backward()
                dc.adam_step(st_, [p])
            return p.data

        np.testing.assert_array_equal(run(), run())

    def test_frozen_untouched(self):
        p = Parameter(np.ones(2, np.float32), trainable=False)
        p.grad[:] = 3.0
        dc.adam_step(dc.AdamState(lr=1.0), [p])
        np.testing.assert_array_equal(p.data, [1, 1])
        np.testing.assert_array_equal(p.grad, [0, 0])

    def test_same_local_names_do_not_collide(self):
        a = Parameter(np.ones((2, 2), np.float32), name="weight")
        b = Parameter(np.ones((3,), np.float32), name="weight")
        a.grad[:] = 1.0
        b.grad[:] = 1.0
        dc.adam_step(dc.AdamState(lr=0.1), [a, b])
        assert a.data.shape == (2, 2) and b.data.shape == (3,)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path, rng):
        tensors = {"a": rng.standard_normal((3, 4)).astype(np.float32),
                   "b.c": np.array([np.float32(1e-45), -0.0, np.inf], np.float32),
                   "scalar": np.array(2.5, np.float32)}
        path = dc.save_checkpoint(tmp_path / "x.btkd", tensors, {"k": "v = w"})
        back, meta = dc.load_checkpoint(path)
        assert list(back) == list(tensors)
        for k in tensors:
            assert back[k].shape == tensors[k].shape
            assert back[k].tobytes() == tensors[k].tobytes()
        assert meta == {"k": "v = w"}

    def test_layout(self, tmp_path):
        path = dc.save_checkpoint(tmp_path / "x.btkd", {"w": np.array([[1.0, 2.0]], np.float32)})
        raw = path.read_bytes()
        assert raw[:4] == b"BTKD"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 1
        assert int.from_bytes(raw[12:16], "little") == 1 and raw[16:17] == b"w"
        assert int.from_bytes(raw[17:21], "little") == 2
        assert [int.from_bytes(raw[21 + 8 * i:29 + 8 * i], "little") for i in range(2)] == [1, 2]
        assert np.frombuffer(raw[37:45], "<f4").tolist() == [1.0, 2.0]

    def test_version_mismatch(self, tmp_path):
        path = dc.save_checkpoint(tmp_path / "x.btkd", {"w": np.zeros(1, np.float32)})
        raw = bytearray(path.read_bytes())
        raw[4:8] = (7).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(dc.CheckpointVersionError):
            dc.load_checkpoint(path)

    def test_bad_magic_and_truncation(self, tmp_path):
        p = tmp_path / "bad.btkd"
        p.write_bytes(b"NOPE" + b"\0" * 8)
        with pytest.raises(dc.CheckpointError):
            dc.load_checkpoint(p)
        good = dc.save_checkpoint(tmp_path / "g.btkd", {"w": np.zeros(8, np.float32)})
        p.write_bytes(good.read_bytes()[:30])
        with pytest.raises(dc.CheckpointError):
            dc.load_checkpoint(p)
