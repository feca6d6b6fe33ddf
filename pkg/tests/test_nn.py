"""From-scratch layer engine: kernels, gradient checks, LSTM, Adam, checkpoints."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamshm.errors import ArtifactIOError, InvalidParameterError, ShapeError
from beamshm.nn import ops
from beamshm.nn.gradcheck import MAX_CHECK_PARAMS, finite_difference_check
from beamshm.nn.layers import (LSTM, Conv2D, Dense, GlobalAveragePool, MaxPool2D, ReLU,
                               Reshape)
from beamshm.nn.model import Sequential, clone, load_model, save_model, snapshot
from beamshm.nn.optim import AdamState, adam_step

SEEDS = range(20)


def loop_conv(x, w, b, stride=1, padding=0):
    """Oracle: direct quadruple loop over output rows, columns, filters and taps."""
    n, h, wd, c = x.shape
    f, _, _, k = w.shape
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    h2 = (h - f + 2 * padding) // stride + 1
    w2 = (wd - f + 2 * padding) // stride + 1
    out = np.zeros((n, h2, w2, k))
    for s in range(n):
        for i in range(h2):
            for j in range(w2):
                for q in range(k):
                    acc = b[q]
                    for di in range(f):
                        for dj in range(f):
                            for ch in range(c):
                                acc += xp[s, i * stride + di, j * stride + dj, ch] * w[di, dj, ch, q]
                    out[s, i, j, q] = acc
    return out


class TestConv:
    def test_matches_loop_reference(self):
        """Random 6x6x2 input, 3 filters of 3x3, stride 1, no padding."""
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 6, 6, 2))
        w = rng.standard_normal((3, 3, 2, 3))
        b = rng.standard_normal(3)
        np.testing.assert_allclose(ops.conv2d_forward(x, w, b), loop_conv(x, w, b),
                                   rtol=0, atol=1e-12)

    @pytest.mark.parametrize("stride,padding", [(2, 0), (1, 1), (2, 2)])
    def test_matches_loop_reference_strided_padded(self, stride, padding):
        rng = np.random.default_rng(stride + padding)
        x = rng.standard_normal((1, 7, 7, 2))
        w = rng.standard_normal((3, 3, 2, 2))
        b = rng.standard_normal(2)
        got = ops.conv2d_forward(x, w, b, stride, padding)
        np.testing.assert_allclose(got, loop_conv(x, w, b, stride, padding), rtol=0, atol=1e-12)

    def test_identity_kernel(self):
        x = np.random.default_rng(1).standard_normal((1, 4, 5, 1))
        out = ops.conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_same_padding_keeps_size(self):
        layer = Conv2D(1, 4, 3, padding="same")
        assert layer.output_shape((200, 200, 1)) == (200, 200, 4)

    def test_non_integral_output_names_axis(self):
        with pytest.raises(ShapeError, match="axis H"):
            ops.conv_output_size(10, 3, 2, 0, "H")

    def test_zero_upstream_gives_zero_gradients(self):
        rng = np.random.default_rng(2)
        x, w = rng.standard_normal((1, 5, 5, 2)), rng.standard_normal((3, 3, 2, 2))
        dx, dw, db = ops.conv2d_backward(np.zeros((1, 3, 3, 2)), x, w)
        assert not dx.any() and not dw.any() and not db.any()

    def test_unit_filter_passes_gradient(self):
        g = np.random.default_rng(3).standard_normal((1, 4, 4, 1))
        dx, _, _ = ops.conv2d_backward(g, np.zeros((1, 4, 4, 1)), np.ones((1, 1, 1, 1)))
        np.testing.assert_array_equal(dx, g)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck_5x5(self, seed):
        rng = np.random.default_rng(seed)
        model = Sequential([Conv2D(1, 2, 3, rng=rng)])
        model.layers[0].params["b"][:] = rng.standard_normal(2)
        rep = finite_difference_check(model, rng.standard_normal((1, 5, 5, 1)), seed=seed)
        assert rep.passed(1e-6), rep

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck_strided_same_padded(self, seed):
        rng = np.random.default_rng(100 + seed)
        model = Sequential([Conv2D(2, 2, 3, stride=2, padding="same", rng=rng)])
        rep = finite_difference_check(model, rng.standard_normal((2, 7, 7, 2)), seed=seed)
        assert rep.passed(1e-6), rep

    def test_skipping_input_gradient_keeps_weight_gradient(self):
        rng = np.random.default_rng(4)
        layer = Conv2D(1, 2, 3, rng=rng)
        x = rng.standard_normal((1, 5, 5, 1))
        g = rng.standard_normal((1, 3, 3, 2))
        layer.forward(x)
        layer.backward(g)
        dw = layer.grads["w"].copy()
        layer.forward(x)
        assert layer.backward(g, need_input_grad=False) is None
        np.testing.assert_array_equal(layer.grads["w"], dw)


class TestMaxPool:
    def test_output_size(self):
        assert MaxPool2D(4).output_shape((200, 200, 32)) == (50, 50, 32)

    def test_constant_input_first_argmax(self):
        """Ties route the whole gradient to the first window entry."""
        x = np.full((1, 4, 4, 1), 3.0)
        out, arg = ops.maxpool2d_forward(x, 2)
        assert np.all(out == 3.0)
        dx = ops.maxpool2d_backward(np.ones((1, 2, 2, 1)), arg, x.shape, 2)
        expected = np.zeros((4, 4))
        expected[::2, ::2] = 1.0
        np.testing.assert_array_equal(dx[0, :, :, 0], expected)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck_8x8(self, seed):
        rng = np.random.default_rng(seed)
        model = Sequential([MaxPool2D(2)])
        rep = finite_difference_check(model, rng.standard_normal((1, 8, 8, 2)), seed=seed)
        assert rep.passed(1e-6), rep

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([(2, 2), (3, 1), (2, 1), (4, 4)]))
    def test_energy_conserved(self, seed, pool):
        """Routed gradient sums to the upstream sum, overlapping windows included."""
        extent, stride = pool
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((2, 8, 8, 3))
        out, arg = ops.maxpool2d_forward(x, extent, stride)
        g = rng.standard_normal(out.shape)
        dx = ops.maxpool2d_backward(g, arg, x.shape, extent, stride)
        assert dx.sum() == pytest.approx(g.sum(), rel=1e-12, abs=1e-12)

    def test_non_integral_rejected(self):
        with pytest.raises(ShapeError):
            MaxPool2D(2).output_shape((9, 9, 1))


class TestGlobalAveragePool:
    def test_hand_value(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 2, 2, 1)
        assert ops.global_average_pool_forward(x)[0, 0] == 2.5

    def test_constant_channel(self):
        assert np.all(ops.global_average_pool_forward(np.full((1, 3, 5, 2), 7.0)) == 7.0)

    def test_backward_spreads_evenly(self):
        dx = ops.global_average_pool_backward(np.array([[2.0]]), (1, 2, 2, 1))
        np.testing.assert_array_equal(dx, np.full((1, 2, 2, 1), 0.5))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        rep = finite_difference_check(Sequential([GlobalAveragePool()]),
                                      rng.standard_normal((2, 3, 4, 2)), seed=seed)
        assert rep.passed(1e-6), rep


class TestDense:
    def test_identity(self):
        x = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_array_equal(ops.dense_forward(x, np.eye(4), np.zeros(4)), x)

    def test_zero_input_gives_bias(self):
        b = np.array([1.0, -2.0])
        np.testing.assert_array_equal(ops.dense_forward(np.zeros((1, 3)), np.ones((3, 2)), b)[0], b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.dense_forward(np.zeros((1, 3)), np.zeros((4, 2)), np.zeros(2))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        model = Sequential([Dense(5, 3, rng=rng)])
        rep = finite_difference_check(model, rng.standard_normal((4, 5)), seed=seed)
        assert rep.passed(1e-6), rep

    def test_linear_net_near_exact(self):
        rng = np.random.default_rng(0)
        model = Sequential([Dense(4, 3, rng=rng), Dense(3, 2, rng=rng)])
        # no truncation error for a linear map, so a wide step only shrinks rounding
        rep = finite_difference_check(model, rng.standard_normal((2, 4)), h=1e-2)
        assert rep.passed(1e-10), rep


class TestRelu:
    def test_values_and_subgradient(self):
        x = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(ops.relu_forward(x), [0.0, 0.0, 2.0])
        np.testing.assert_array_equal(ops.relu_backward(np.ones(3), x), [0.0, 0.0, 1.0])

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((3, 6))
        x[np.abs(x) < 1e-3] = 0.5  # keep the kink out of the difference stencil
        rep = finite_difference_check(Sequential([ReLU()]), x, seed=seed)
        assert rep.passed(1e-6), rep


class TestReshape:
    def test_zero_fill_and_backward_slice(self):
        layer = Reshape((3, 3, 1), n_features=7)
        x = np.arange(7.0).reshape(1, 7)
        out = layer.forward(x)
        assert out.shape == (1, 3, 3, 1)
        assert out.reshape(-1)[7:].tolist() == [0.0, 0.0]
        g = np.arange(9.0).reshape(1, 3, 3, 1)
        np.testing.assert_array_equal(layer.backward(g), np.arange(7.0).reshape(1, 7))

    def test_too_many_features(self):
        with pytest.raises(ShapeError):
            Reshape((2, 2), n_features=5)


def scalar_lstm(w=1.0):
    layer = LSTM(1, 1)
    layer.params["W"][:] = w
    layer.params["U"][:] = 0.0
    layer.params["b"][:] = 0.0
    return layer


class TestLstm:
    def test_zero_parameters(self):
        layer = LSTM(3, 4)
        for p in layer.params.values():
            p[:] = 0.0
        h = layer.forward(np.random.default_rng(0).standard_normal((2, 5, 3)))
        assert not h.any()

    def test_scalar_hand_value(self):
        """All four input weights 1, U = 0, b = 0, x1 = 1."""
        s = 1 / (1 + math.exp(-1))
        c1 = s * math.tanh(1)
        h_expected = s * math.tanh(c1)
        assert h_expected == pytest.approx(0.369606, abs=1e-6)
        h = scalar_lstm().forward(np.ones((1, 1, 1)))
        assert h[0, 0, 0] == pytest.approx(h_expected, abs=1e-15)

    def test_last_state_readout(self):
        rng = np.random.default_rng(1)
        seq = LSTM(2, 3, return_sequences=True, rng=np.random.default_rng(5))
        last = LSTM(2, 3, return_sequences=False, rng=np.random.default_rng(5))
        x = rng.standard_normal((2, 4, 2))
        np.testing.assert_array_equal(seq.forward(x)[:, -1], last.forward(x))

    def test_forget_bias_and_orthogonal_recurrence(self):
        layer = LSTM(3, 4, rng=np.random.default_rng(0))
        b = layer.params["b"]
        assert np.all(b[4:8] == 1.0) and not b[:4].any() and not b[8:].any()
        U = layer.params["U"]
        np.testing.assert_allclose(U @ U.T, np.eye(4), atol=1e-12)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradcheck_three_steps(self, seed):
        rng = np.random.default_rng(seed)
        model = Sequential([LSTM(2, 3, rng=rng), LSTM(3, 2, return_sequences=False, rng=rng)])
        for p in model.named_params().values():
            p[...] = rng.uniform(-1, 1, p.shape)
        rep = finite_difference_check(model, rng.standard_normal((2, 3, 2)), seed=seed)
        assert rep.passed(1e-5), rep

    def test_input_dim_mismatch(self):
        with pytest.raises(ShapeError):
            LSTM(3, 2).forward(np.zeros((1, 2, 4)))


class TestMse:
    def test_values(self):
        assert ops.mse_loss([0.0, 0.0], [1.0, 1.0])[0] == 1.0
        assert ops.mse_loss([0.5, 2.0], [0.5, 2.0])[0] == 0.0

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(0)
        p, t = rng.standard_normal(6), rng.standard_normal(6)
        _, g = ops.mse_loss(p, t)
        h = 1e-6
        for i in range(6):
            e = np.zeros(6)
            e[i] = h
            fd = (ops.mse_loss(p + e, t)[0] - ops.mse_loss(p - e, t)[0]) / (2 * h)
            assert g[i] == pytest.approx(fd, rel=1e-6)
        np.testing.assert_allclose(g, 2 * (p - t) / 6, rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ops.mse_loss(np.zeros(3), np.zeros(4))


class TestGradCheckTool:
    def test_small_cnn(self):
        rng = np.random.default_rng(0)
        model = Sequential([Conv2D(1, 2, 3, padding="same", rng=rng), ReLU(), MaxPool2D(2),
                            Conv2D(2, 2, 3, rng=rng), ReLU(), GlobalAveragePool(),
                            Dense(2, 1, rng=rng)])
        rep = finite_difference_check(model, rng.standard_normal((2, 10, 10, 1)),
                                      check_input=False)
        assert rep.passed(1e-6), rep

    def test_parameter_guard(self):
        model = Sequential([Dense(MAX_CHECK_PARAMS, 1)])
        with pytest.raises(InvalidParameterError):
            finite_difference_check(model, np.zeros((1, MAX_CHECK_PARAMS)))

    def test_catches_wrong_gradient(self):
        class Broken(Dense):
            def backward(self, grad):
                dx = super().backward(grad)
                self.grads["w"] = self.grads["w"] * 1.01
                return dx

        rng = np.random.default_rng(0)
        rep = finite_difference_check(Sequential([Broken(3, 2, rng=rng)]),
                                      rng.standard_normal((2, 3)))
        assert not rep.passed(1e-6)
        assert rep.worst == "0.w"


class TestSequential:
    def test_forward_is_pure(self):
        rng = np.random.default_rng(0)
        model = Sequential([Dense(4, 3, rng=rng), ReLU(), Dense(3, 1, rng=rng)])
        x = rng.standard_normal((5, 4))
        assert np.array_equal(model(x), model(x))

    def test_shape_trace(self):
        model = Sequential([Reshape((6, 6, 1)), Conv2D(1, 3, 3), MaxPool2D(2),
                            GlobalAveragePool(), Dense(3, 1)])
        assert model.shape_trace((36,)) == [(36,), (6, 6, 1), (4, 4, 3), (2, 2, 3), (3,), (1,)]

    def test_checkpoint_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        model = Sequential([Reshape((4, 4, 1)), Conv2D(1, 2, 3, rng=rng), ReLU(),
                            GlobalAveragePool(), Dense(2, 1, rng=rng)])
        save_model(tmp_path / "m", model, extra={"note": "x"}, extra_arrays={"s": np.ones(2)})
        loaded, extra, arrays = load_model(tmp_path / "m.json")
        x = rng.standard_normal((3, 16))
        np.testing.assert_array_equal(loaded(x), model(x))
        assert extra == {"note": "x"}
        np.testing.assert_array_equal(arrays["s"], np.ones(2))

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        model = Sequential([Dense(3, 2, rng=np.random.default_rng(1))])
        save_model(tmp_path / "a", model)
        save_model(tmp_path / "b", clone(model))
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
        a = (tmp_path / "a.json").read_text().replace('"a.bin"', '"X"')
        b = (tmp_path / "b.json").read_text().replace('"b.bin"', '"X"')
        assert a == b

    def test_corrupted_blob_detected(self, tmp_path):
        save_model(tmp_path / "m", Sequential([Dense(2, 2)]))
        blob = bytearray((tmp_path / "m.bin").read_bytes())
        blob[0] ^= 1
        (tmp_path / "m.bin").write_bytes(bytes(blob))
        with pytest.raises(ArtifactIOError):
            load_model(tmp_path / "m.json")


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = AdamState()
        for _ in range(100):
            assert adam_step(params, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    @pytest.mark.xfail(strict=True, reason="with lr 0.1 and default betas Adam overshoots "
                       "zero at step 12, after which |w| grows; torch.optim.Adam does the same")
    def test_quadratic_descent(self):
        """f(w) = w^2 from w = 1 with lr 0.1: |w| falls on each of the first 20 steps."""
        params = {"w": np.array([1.0])}
        state = AdamState(lr=0.1)
        prev = 1.0
        for _ in range(20):
            adam_step(params, {"w": 2 * params["w"]}, state)
            assert abs(params["w"][0]) < prev
            prev = abs(params["w"][0])

    def test_quadratic_descent_until_sign_change(self):
        """|w| falls on every step until w first crosses zero, which happens by step 12."""
        params = {"w": np.array([1.0])}
        state = AdamState(lr=0.1)
        prev = 1.0
        for step in range(1, 21):
            adam_step(params, {"w": 2 * params["w"]}, state)
            if params["w"][0] < 0:
                break
            assert params["w"][0] < prev
            prev = params["w"][0]
        assert step <= 12

    def test_matches_torch_adam(self):
        """Independent reference: torch.optim.Adam on the same quadratic, 20 steps."""
        torch = pytest.importorskip("torch")
        w = torch.tensor([1.0, -0.5], dtype=torch.float64, requires_grad=True)
        opt = torch.optim.Adam([w], lr=0.1)
        params = {"w": np.array([1.0, -0.5])}
        state = AdamState(lr=0.1)
        for _ in range(20):
            opt.zero_grad()
            (w**2).sum().backward()
            opt.step()
            adam_step(params, {"w": 2 * params["w"]}, state)
        np.testing.assert_allclose(params["w"], w.detach().numpy(), rtol=1e-12, atol=1e-14)

    def test_first_step_size_is_lr(self):
        params = {"w": np.array([5.0])}
        adam_step(params, {"w": np.array([3.0])}, AdamState(lr=0.01))
        assert params["w"][0] == pytest.approx(5.0 - 0.01, abs=1e-9)

    def test_non_finite_rejected(self):
        params = {"a": np.array([1.0]), "b": np.array([2.0])}
        state = AdamState()
        ok = adam_step(params, {"a": np.array([0.5]), "b": np.array([np.nan])}, state)
        assert not ok
        assert state.step == 0 and state.n_rejected == 1
        assert params["a"][0] == 1.0 and params["b"][0] == 2.0

    def test_deterministic_training(self):
        def run():
            rng = np.random.default_rng(3)
            model = Sequential([Dense(3, 4, rng=rng), ReLU(), Dense(4, 1, rng=rng)])
            state = AdamState()
            x, y = rng.standard_normal((16, 3)), rng.standard_normal((16, 1))
            for _ in range(25):
                _, g = ops.mse_loss(model(x), y)
                model.backward(g)
                adam_step(model.named_params(), model.named_grads(), state)
            return snapshot(model)

        a, b = run(), run()
        assert all(np.array_equal(a[k], b[k]) for k in a)

    @pytest.mark.parametrize("kw", [{"lr": 0.0}, {"beta1": 1.0}, {"eps": 0.0}])
    def test_invalid_hyperparameters(self, kw):
        with pytest.raises(InvalidParameterError):
            AdamState(**kw)
