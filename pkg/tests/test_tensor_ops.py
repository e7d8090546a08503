"""Primitive operation semantics against hand values and loop oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
import tsinet.tensor as T
from tsinet.tensor import ConfigError, NumericError, ShapeError, Tensor


class TestMatmul:
    def test_identity(self):
        eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
        m = Tensor([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(T.matmul(eye, m).data, m.data)

    def test_hand_computed_1x2_2x1(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.shape == (1, 1)
        assert out.item() == 11.0

    def test_random_matches_triple_loop(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        out = T.matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64))
        np.testing.assert_allclose(out.data, oracles.matmul_loops(a, b), atol=1e-12)

    def test_batched_broadcast(self, rng):
        a = rng.normal(size=(5, 3, 4))
        b = rng.normal(size=(4, 2))
        out = T.matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64))
        for i in range(5):
            np.testing.assert_allclose(out.data[i], oracles.matmul_loops(a[i], b),
                                       atol=1e-12)

    def test_shape_error_names_axes(self):
        with pytest.raises(ShapeError, match="axis -1 is 3.*axis -2 is 2"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


class TestSoftmax:
    def test_uniform_logits(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]), axis=0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-7)

    def test_single_element_axis(self):
        out = T.softmax(Tensor([[7.0]]), axis=1)
        np.testing.assert_array_equal(out.data, [[1.0]])

    def test_extreme_logits_match_mpmath_oracle(self):
        logits = [1000.0, 1001.0]
        out = T.softmax(Tensor(logits, dtype=np.float64), axis=0)
        expected = oracles.softmax_row(logits, use_mpmath=True)
        assert np.isfinite(out.data).all()
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)

    @given(st.integers(2, 6), st.integers(1, 5),
           st.floats(-1e3, 1e3), st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_slices_sum_to_one(self, n, m, scale, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, size=(n, m)) * scale
        out = T.softmax(Tensor(x, dtype=np.float64), axis=0)
        np.testing.assert_allclose(out.data.sum(axis=0), np.ones(m), atol=1e-6)
        assert (out.data >= 0).all() and (out.data <= 1).all()
        if np.ptp(x) < 700:  # below the exp underflow threshold: strictly positive
            assert (out.data > 0).all()

    def test_bad_axis(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor([1.0, 2.0]), axis=3)


class TestSigmoid:
    def test_zero_is_half(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_large_negative_saturates_without_nan(self):
        out = T.sigmoid(Tensor([-30.0], dtype=np.float64))
        assert 0.0 < out.data[0] < 1e-6

    def test_huge_magnitudes_finite(self):
        out = T.sigmoid(Tensor([-1e4, 1e4], dtype=np.float64))
        assert np.isfinite(out.data).all()

    def test_random_grid_matches_scalar_oracle(self, rng):
        x = rng.normal(size=(4, 5)) * 3
        out = T.sigmoid(Tensor(x, dtype=np.float64))
        expected = [[oracles.sigmoid_scalar(v) for v in row] for row in x]
        np.testing.assert_allclose(out.data, expected, rtol=1e-14)


class TestConv2d:
    def test_identity_pointwise(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 5, 5)), dtype=np.float64)
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1), dtype=np.float64)
        np.testing.assert_allclose(T.conv2d(x, w).data, x.data, atol=1e-15)

    def test_zero_kernel(self, rng):
        x = Tensor(rng.normal(size=(1, 2, 4, 4)), dtype=np.float64)
        w = Tensor(np.zeros((2, 2, 3, 3)), dtype=np.float64)
        assert (T.conv2d(x, w, padding=1).data == 0).all()

    def test_depthwise_center_tap_is_exact_identity(self, rng):
        x = rng.normal(size=(2, 5, 6, 6)).astype(np.float32)
        w = np.zeros((5, 1, 3, 3), dtype=np.float32)
        w[:, 0, 1, 1] = 1.0
        out = T.conv2d(Tensor(x), Tensor(w), padding=1, groups=5)
        assert (out.data == x).all()

    def test_depthwise_matches_loop_oracle(self, rng):
        x = rng.normal(size=(1, 3, 4, 4))
        w = rng.normal(size=(3, 1, 3, 3))
        out = T.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                       padding=1, groups=3)
        np.testing.assert_allclose(out.data, oracles.conv2d_loops(x, w, padding=1, groups=3),
                                   atol=1e-12)

    @pytest.mark.parametrize("stride,padding,groups,cin,cout", [
        (1, 1, 1, 3, 4), (2, 1, 1, 3, 4), (1, 0, 1, 2, 2), (1, 1, 2, 4, 6), (2, 2, 1, 2, 3),
    ])
    def test_general_matches_loop_oracle(self, rng, stride, padding, groups, cin, cout):
        x = rng.normal(size=(2, cin, 6, 5))
        w = rng.normal(size=(cout, cin // groups, 3, 3))
        out = T.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                       stride=stride, padding=padding, groups=groups)
        expected = oracles.conv2d_loops(x, w, stride=stride, padding=padding, groups=groups)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_bias(self, rng):
        x = rng.normal(size=(1, 2, 3, 3))
        w = rng.normal(size=(4, 2, 1, 1))
        b = rng.normal(size=4)
        out = T.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                       Tensor(b, dtype=np.float64))
        expected = oracles.conv2d_loops(x, w) + b[None, :, None, None]
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_group_divisibility_error(self):
        with pytest.raises(ConfigError, match="groups"):
            T.conv2d(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((3, 1, 1, 1))),
                     groups=2)

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))


class TestConv1dTemporal:
    def test_center_tap_identity(self, rng):
        x = Tensor(rng.normal(size=(2, 3, 6)), dtype=np.float64)
        w = np.zeros((3, 1, 3))
        w[:, 0, 1] = 1.0
        np.testing.assert_array_equal(
            T.conv1d_temporal(x, Tensor(w, dtype=np.float64)).data, x.data)

    def test_shift_kernel_moves_left_with_zero_fill(self):
        x = Tensor(np.arange(1.0, 6.0).reshape(1, 1, 5), dtype=np.float64)
        w = Tensor(np.array([[[0.0, 0.0, 1.0]]]), dtype=np.float64)
        out = T.conv1d_temporal(x, w)
        np.testing.assert_array_equal(out.data[0, 0], [2.0, 3.0, 4.0, 5.0, 0.0])

    def test_random_matches_loop_oracle(self, rng):
        x = rng.normal(size=(3, 4, 7))
        w = rng.normal(size=(4, 1, 3))
        out = T.conv1d_temporal(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64))
        np.testing.assert_allclose(out.data, oracles.conv1d_depthwise_loops(x, w),
                                   atol=1e-12)

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            T.conv1d_temporal(Tensor(np.zeros((1, 2, 4))), Tensor(np.zeros((2, 1, 2))))


class TestGlobalAvgPool:
    def test_constant_field(self):
        out = T.global_avg_pool(Tensor(np.full((2, 3, 4, 4), 7.5)))
        np.testing.assert_allclose(out.data, np.full((2, 3, 1, 1), 7.5), rtol=1e-6)

    def test_hand_mean(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert T.global_avg_pool(x).data[0, 0, 0, 0] == 2.5

    def test_random_matches_loop_oracle(self, rng):
        x = rng.normal(size=(2, 3, 5, 4))
        out = T.global_avg_pool(Tensor(x, dtype=np.float64))
        np.testing.assert_allclose(out.data, oracles.gap_loops(x), atol=1e-12)


class TestLinear:
    def test_identity_passthrough(self, rng):
        x = Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
        out = T.linear(x, Tensor(np.eye(3), dtype=np.float64),
                       Tensor(np.zeros(3), dtype=np.float64))
        np.testing.assert_allclose(out.data, x.data, atol=1e-15)

    def test_zero_weights_give_bias(self, rng):
        x = Tensor(rng.normal(size=(4, 3)), dtype=np.float64)
        b = np.array([1.0, -2.0])
        out = T.linear(x, Tensor(np.zeros((2, 3)), dtype=np.float64),
                       Tensor(b, dtype=np.float64))
        np.testing.assert_array_equal(out.data, np.tile(b, (4, 1)))

    def test_random_matches_matmul_oracle(self, rng):
        x = rng.normal(size=(5, 4))
        w = rng.normal(size=(3, 4))
        b = rng.normal(size=3)
        out = T.linear(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64),
                       Tensor(b, dtype=np.float64))
        np.testing.assert_allclose(out.data, oracles.matmul_loops(x, w.T) + b, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            T.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


class TestBatchNorm:
    def test_normalized_input_passes_through(self, rng):
        x = rng.normal(size=(8, 3, 4, 4))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        out = T.batch_norm(Tensor(x, dtype=np.float64),
                           Tensor(np.ones(3), dtype=np.float64),
                           Tensor(np.zeros(3), dtype=np.float64),
                           T.BatchNormState(3, dtype=np.float64), training=True)
        np.testing.assert_allclose(out.data, x, atol=1e-4)

    def test_zero_gamma_gives_beta(self, rng):
        beta = np.array([1.0, -1.0])
        out = T.batch_norm(Tensor(rng.normal(size=(4, 2, 3, 3)), dtype=np.float64),
                           Tensor(np.zeros(2), dtype=np.float64),
                           Tensor(beta, dtype=np.float64),
                           T.BatchNormState(2, dtype=np.float64), training=True)
        np.testing.assert_allclose(out.data, np.broadcast_to(
            beta[None, :, None, None], out.shape), atol=1e-12)

    def test_random_matches_two_pass_oracle(self, rng):
        x = rng.normal(size=(5, 3, 2, 4)) * 2 + 1
        gamma = rng.uniform(0.5, 1.5, size=3)
        beta = rng.normal(size=3)
        out = T.batch_norm(Tensor(x, dtype=np.float64), Tensor(gamma, dtype=np.float64),
                           Tensor(beta, dtype=np.float64),
                           T.BatchNormState(3, dtype=np.float64), training=True)
        np.testing.assert_allclose(out.data, oracles.batchnorm_loops(x, gamma, beta),
                                   atol=1e-8)

    def test_degenerate_statistics_error(self):
        with pytest.raises(ShapeError, match="degenerate"):
            T.batch_norm(Tensor(np.zeros((1, 2, 1, 1))), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), T.BatchNormState(2), training=True)

    def test_running_statistics_update_and_eval(self, rng):
        x = rng.normal(size=(16, 2, 4, 4)).astype(np.float32) * 3 + 0.5
        gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
        state = T.BatchNormState(2)
        for _ in range(200):
            T.batch_norm(Tensor(x), gamma, beta, state, training=True, momentum=0.1)
        np.testing.assert_allclose(state.mean, x.mean(axis=(0, 2, 3)), atol=1e-3)
        out = T.batch_norm(Tensor(x), gamma, beta, state, training=False)
        assert abs(out.data.mean()) < 1e-2


class TestMaxPool:
    def test_matches_window_max(self, rng):
        x = rng.normal(size=(2, 3, 8, 8))
        out = T.maxpool2d(Tensor(x, dtype=np.float64), 3, 2, 1)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
        for i in range(4):
            for j in range(4):
                win = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max(axis=(2, 3))
                np.testing.assert_array_equal(out.data[:, :, i, j], win)


class TestNumericPolicy:
    def test_overflow_raises(self):
        with pytest.raises(NumericError):
            T.exp(Tensor([1000.0], dtype=np.float64))

    def test_log_of_zero_raises(self):
        with pytest.raises(NumericError):
            T.log(Tensor([0.0]))

    def test_checks_can_be_disabled(self):
        previous = T.set_debug_checks(False)
        try:
            out = T.exp(Tensor([1000.0], dtype=np.float64))
            assert np.isinf(out.data[0])
        finally:
            T.set_debug_checks(previous)


class TestMisc:
    def test_mixed_dtype_rejected(self):
        with pytest.raises(ConfigError, match="mixed"):
            T.add(Tensor([1.0], dtype=np.float32), Tensor([1.0], dtype=np.float64))

    def test_tensor_division_by_tensor_rejected(self):
        with pytest.raises(ConfigError):
            Tensor([1.0]) / Tensor([2.0])

    def test_determinism_bit_identical(self, rng):
        x = rng.normal(size=(3, 4, 5, 5)).astype(np.float32)
        w = rng.normal(size=(6, 4, 3, 3)).astype(np.float32)
        a = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        b = T.conv2d(Tensor(x), Tensor(w), padding=1).data
        assert (a == b).all()
        s1 = T.softmax(Tensor(x), axis=1).data
        s2 = T.softmax(Tensor(x), axis=1).data
        assert (s1 == s2).all()

    def test_concat_split_round_trip(self, rng):
        x = rng.normal(size=(2, 8, 3, 3)).astype(np.float32)
        parts = [Tensor(x[:, :3]), Tensor(x[:, 3:5]), Tensor(x[:, 5:])]
        merged = T.concat(parts, axis=1)
        assert (merged.data == x).all()
