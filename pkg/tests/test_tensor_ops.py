"""Forward-op contracts of the tensor engine against brute-force oracles."""

import numpy as np
import pytest

from convtransseg import backend
from convtransseg.errors import ConfigurationError, UsageError
from convtransseg.rng import RngState
from convtransseg.tensor import (
    Tape,
    Tensor,
    backward,
    batch_norm2d,
    conv2d,
    dropout,
    layer_norm,
    linear,
    max_pool2,
    relu,
    reshape,
    softmax_lastdim,
    transpose,
)

from oracles import conv2d_direct, maxpool2_direct


class TestConv2d:
    def test_identity_1x1_kernel(self):
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
        w = Tensor(np.ones((1, 1, 1, 1), dtype=np.float32))
        b = Tensor(np.zeros(1, dtype=np.float32))
        out = conv2d(x, w, b, 0)
        np.testing.assert_array_equal(out.data, np.ones((1, 1, 3, 3), dtype=np.float32))

    def test_full_window_sum_pad1(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 2, 2)
        w = np.ones((1, 1, 3, 3), dtype=np.float32)
        b = np.zeros(1, dtype=np.float32)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), 1)
        expected = conv2d_direct(x, w, b, 1)
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-6)
        np.testing.assert_array_equal(out.data.reshape(2, 2), np.full((2, 2), 10.0, dtype=np.float32))

    def test_zero_input_gives_bias(self):
        rng = RngState(3)
        x = Tensor(np.zeros((2, 3, 4, 4), dtype=np.float32))
        w = Tensor(rng.normal((5, 3, 3, 3), dtype=np.float32))
        b = Tensor(np.arange(5, dtype=np.float32))
        out = conv2d(x, w, b, 1)
        expected = np.broadcast_to(np.arange(5, dtype=np.float32)[None, :, None, None], (2, 5, 4, 4))
        np.testing.assert_array_equal(out.data, expected)

    @pytest.mark.parametrize("pad,k", [(0, 1), (1, 3), (2, 5)])
    def test_random_matches_direct_oracle(self, pad, k):
        rng = RngState(10 + k)
        x = rng.normal((2, 3, 6, 5))
        w = rng.normal((4, 3, k, k))
        b = rng.normal((4,))
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), pad)
        np.testing.assert_allclose(out.data, conv2d_direct(x, w, b, pad), rtol=1e-10, atol=1e-10)

    def test_channel_mismatch_reports_both_shapes(self):
        x = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
        w = Tensor(np.zeros((2, 5, 3, 3), dtype=np.float32))
        with pytest.raises(ConfigurationError, match=r"C_in=3.*expects 5"):
            conv2d(x, w, Tensor(np.zeros(2, dtype=np.float32)), 1)


class TestBackends:
    def test_im2col_col2im_backends_agree_bitwise(self):
        if backend.KERNEL_BACKEND != "cython":
            pytest.skip("compiled backend unavailable")
        rng = RngState(5)
        for dtype in (np.float32, np.float64):
            xp = rng.normal((2, 3, 7, 6)).astype(dtype)
            a = backend.im2col_numpy(xp, 3)
            b = backend.im2col_cython(xp, 3)
            np.testing.assert_array_equal(a, b)
            cols = rng.normal((2, 27, 20)).astype(dtype)
            da = backend.col2im_numpy(cols, 2, 3, 7, 6, 3)
            db = backend.col2im_cython(cols, 2, 3, 7, 6, 3)
            np.testing.assert_array_equal(da, db)


class TestMaxPool:
    def test_single_window(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32).reshape(1, 1, 2, 2))
        assert max_pool2(x).item() == 4.0

    def test_tie_break_first_in_window(self):
        x = Tensor(np.full((1, 1, 2, 2), 7.0, dtype=np.float32), requires_grad=True)
        with Tape() as tape:
            out = max_pool2(x)
            loss = out.sum()
        backward(loss, tape)
        expected = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=np.float32).reshape(1, 1, 2, 2)
        np.testing.assert_array_equal(x.grad, expected)

    def test_4x4_matches_window_scan(self):
        rng = RngState(2)
        x = rng.normal((3, 2, 4, 4), dtype=np.float32)
        x += np.arange(x.size).reshape(x.shape).astype(np.float32) * 1e-3  # distinct values
        out = max_pool2(Tensor(x))
        np.testing.assert_array_equal(out.data, maxpool2_direct(x))

    def test_odd_extent_rejected(self):
        with pytest.raises(ConfigurationError, match="even"):
            max_pool2(Tensor(np.zeros((1, 1, 3, 4), dtype=np.float32)))


class TestBatchNorm:
    def test_training_normalises_batch(self):
        rng = RngState(4)
        x = rng.normal((4, 3, 5, 5), mean=2.0, std=3.0, dtype=np.float32)
        out = batch_norm2d(
            Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)),
            np.zeros(3, dtype=np.float32), np.ones(3, dtype=np.float32), training=True,
        )
        m = out.data.mean(axis=(0, 2, 3))
        v = out.data.var(axis=(0, 2, 3))
        np.testing.assert_allclose(m, 0.0, atol=1e-5)
        np.testing.assert_allclose(v, 1.0, atol=1e-3)

    def test_gamma_zero_gives_beta(self):
        rng = RngState(5)
        x = rng.normal((2, 2, 3, 3), dtype=np.float32)
        beta = np.array([1.5, -2.0], dtype=np.float32)
        out = batch_norm2d(
            Tensor(x), Tensor(np.zeros(2)), Tensor(beta),
            np.zeros(2, dtype=np.float32), np.ones(2, dtype=np.float32), training=True,
        )
        np.testing.assert_allclose(out.data, np.broadcast_to(beta[None, :, None, None], out.shape), atol=1e-6)

    def test_eval_mode_is_affine_of_running_stats(self):
        rng = RngState(6)
        x = rng.normal((2, 2, 3, 3), dtype=np.float32)
        out = batch_norm2d(
            Tensor(x), Tensor(np.full(2, 2.0)), Tensor(np.ones(2)),
            np.zeros(2, dtype=np.float32), np.ones(2, dtype=np.float32), training=False,
        )
        np.testing.assert_allclose(out.data, 2.0 * x + 1.0, rtol=1e-4, atol=1e-4)

    def test_running_stats_update(self):
        rng = RngState(7)
        x = rng.normal((4, 1, 4, 4), mean=5.0, dtype=np.float32)
        rm = np.zeros(1, dtype=np.float32)
        rv = np.ones(1, dtype=np.float32)
        batch_norm2d(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, training=True)
        np.testing.assert_allclose(rm, 0.1 * x.mean(), rtol=1e-5)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(), rtol=1e-4)


class TestLayerNorm:
    def test_constant_token(self):
        out = layer_norm(Tensor(np.ones((1, 3), dtype=np.float32)), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-3)

    def test_symmetric_token_fixed_point(self):
        out = layer_norm(Tensor(np.array([[1.0, -1.0]], dtype=np.float64)), Tensor(np.ones(2, dtype=np.float64)), Tensor(np.zeros(2, dtype=np.float64)))
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-5)

    def test_moments_of_random_tokens(self):
        rng = RngState(8)
        x = rng.normal((4, 7, 16), std=3.0)
        out = layer_norm(Tensor(x), Tensor(np.ones(16, dtype=np.float64)), Tensor(np.zeros(16, dtype=np.float64)))
        # recompute moments directly
        np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.data.var(axis=-1), 1.0, atol=1e-4)


class TestActivations:
    def test_softmax_uniform(self):
        out = softmax_lastdim(Tensor(np.zeros((1, 3), dtype=np.float64)))
        np.testing.assert_allclose(out.data, 1.0 / 3.0, rtol=1e-12)

    def test_softmax_shift_invariance(self):
        rng = RngState(9)
        x = rng.normal((5, 8))
        a = softmax_lastdim(Tensor(x)).data
        b = softmax_lastdim(Tensor(x + 123.456)).data
        np.testing.assert_allclose(a, b, atol=1e-7)

    def test_softmax_rows_sum_to_one(self):
        rng = RngState(10)
        x = rng.normal((6, 11), std=20.0, dtype=np.float32)
        out = softmax_lastdim(Tensor(x)).data
        np.testing.assert_allclose(out.sum(axis=-1, dtype=np.float64), 1.0, atol=1e-6)

    def test_softmax_finite_on_extreme_inputs(self):
        x = np.array([[1e30, -1e30, 0.0]], dtype=np.float32)
        out = softmax_lastdim(Tensor(x)).data
        assert np.all(np.isfinite(out))

    def test_relu(self):
        x = np.array([-2.0, 0.0, 3.0], dtype=np.float32)
        np.testing.assert_array_equal(relu(Tensor(x)).data, [0.0, 0.0, 3.0])

    def test_dropout_degenerate_cases(self):
        x = Tensor(np.ones((4, 4), dtype=np.float32))
        assert dropout(x, 0.0, training=True, rng=RngState(0)) is x
        assert dropout(x, 0.5, training=False, rng=RngState(0)) is x

    def test_dropout_scales_survivors(self):
        rng = RngState(11)
        x = Tensor(np.ones((100, 100), dtype=np.float32))
        out = dropout(x, 0.25, training=True, rng=rng)
        values = np.unique(out.data)
        assert set(values.tolist()) <= {0.0, np.float32(1.0 / 0.75)}
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_dropout_bad_rate(self):
        with pytest.raises(ConfigurationError):
            dropout(Tensor(np.ones(3)), 1.0, training=True, rng=RngState(0))


class TestLinear:
    def test_identity(self):
        x = RngState(12).normal((3, 4), dtype=np.float32)
        out = linear(Tensor(x), Tensor(np.eye(4, dtype=np.float32)), Tensor(np.zeros(4, dtype=np.float32)))
        np.testing.assert_allclose(out.data, x, atol=1e-6)

    def test_hand_matrix_multiply(self):
        # [1,2] @ [[1,0],[0,2]] + [1,1] = [2,5]
        out = linear(
            Tensor(np.array([[1.0, 2.0]], dtype=np.float32)),
            Tensor(np.array([[1.0, 0.0], [0.0, 2.0]], dtype=np.float32)),
            Tensor(np.array([1.0, 1.0], dtype=np.float32)),
        )
        np.testing.assert_array_equal(out.data, [[2.0, 5.0]])

    def test_zero_weight_gives_bias(self):
        x = RngState(13).normal((2, 5, 3), dtype=np.float32)
        b = np.array([4.0, 5.0], dtype=np.float32)
        out = linear(Tensor(x), Tensor(np.zeros((3, 2), dtype=np.float32)), Tensor(b))
        np.testing.assert_array_equal(out.data, np.broadcast_to(b, (2, 5, 2)))

    def test_extent_mismatch(self):
        with pytest.raises(ConfigurationError):
            linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))), Tensor(np.zeros(5)))


class TestReshapeFamily:
    def test_reshape_round_trip_bit_exact(self):
        x = RngState(14).normal((3, 4, 5), dtype=np.float32)
        t = Tensor(x)
        back = reshape(reshape(t, (5, 12)), (3, 4, 5))
        np.testing.assert_array_equal(back.data, x)

    def test_permute_round_trip_bit_exact(self):
        x = RngState(15).normal((2, 3, 4, 5), dtype=np.float32)
        t = transpose(Tensor(x), (3, 1, 0, 2))
        back = transpose(t, np.argsort((3, 1, 0, 2)))
        np.testing.assert_array_equal(back.data, x)

    def test_reshape_bad_count(self):
        with pytest.raises(ConfigurationError):
            reshape(Tensor(np.zeros((2, 3))), (7,))


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(RngState(16).normal((3, 4)), requires_grad=True)
        with Tape() as tape:
            loss = x.sum()
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_sum_of_squares_power_rule(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        with Tape() as tape:
            loss = (x * x).sum()
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_accumulation_doubles_without_reset(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape() as tape:
            loss = (x * x).sum()
        backward(loss, tape)
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, [4.0, 8.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(UsageError, match="scalar"):
            backward(y, tape)

    def test_empty_tape_rejected(self):
        with pytest.raises(UsageError):
            backward(Tensor(np.ones(1), requires_grad=True), Tape())

    def test_nan_check_switch_catches_poison(self):
        from convtransseg.tensor import div, set_nan_checks
        set_nan_checks(True)
        try:
            with np.errstate(divide="ignore"), pytest.raises(FloatingPointError, match="div"):
                div(Tensor(np.ones(3)), Tensor(np.zeros(3)))
        finally:
            set_nan_checks(False)

    def test_determinism_bitwise(self):
        def run():
            rng = RngState(77)
            x = Tensor(rng.normal((2, 3, 8, 8), dtype=np.float32), requires_grad=True)
            w = Tensor(rng.normal((4, 3, 3, 3), dtype=np.float32), requires_grad=True)
            b = Tensor(np.zeros(4, dtype=np.float32), requires_grad=True)
            with Tape() as tape:
                out = max_pool2(relu(conv2d(x, w, b, 1)))
                loss = out.sum()
            backward(loss, tape)
            return out.data.copy(), x.grad.copy(), w.grad.copy()
        o1, gx1, gw1 = run()
        o2, gx2, gw2 = run()
        np.testing.assert_array_equal(o1, o2)
        np.testing.assert_array_equal(gx1, gx2)
        np.testing.assert_array_equal(gw1, gw2)
