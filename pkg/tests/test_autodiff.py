"""Oracle and property tests for the reverse-mode array engine."""

import math

import numpy as np
import pytest

from mrnn import autodiff as ad
from mrnn.autodiff import (
    Array,
    BatchNormState,
    ConfigError,
    DomainError,
    GraphError,
    NonFiniteError,
    ShapeError,
    StateError,
    backward,
    grad_of,
    parameter,
)
from mrnn.gradcheck import finite_diff_check


def nudged(rng, shape, margin=1e-3):
    """Random values kept at least ``margin`` away from zero (PReLU kink)."""
    x = rng.normal(size=shape)
    return np.where(x >= 0, x + margin, x - margin)


def spaced_column_values(rng, h, c):
    """Per-column permutations of well-separated values (no pooling ties)."""
    cols = [rng.permutation(np.linspace(-1.0, 1.0, h)) for _ in range(c)]
    return np.stack(cols, axis=1)


class TestArrayBasics:
    def test_rejects_non_finite(self):
        with pytest.raises(NonFiniteError):
            Array([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Array([np.inf])

    def test_deterministic_outputs(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4, 3))
        k = rng.normal(size=(2, 3, 3))
        b = rng.normal(size=2)
        y1 = ad.conv1d_same(Array(x), Array(k), Array(b)).data
        y2 = ad.conv1d_same(Array(x), Array(k), Array(b)).data
        assert np.array_equal(y1, y2)


class TestConv1dSame:
    def conv_oracle(self, x, kernels, bias):
        # direct triple summation over the zero-padded input
        h, c_in = x.shape
        c_out, win, _ = kernels.shape
        r = (win - 1) // 2
        out = np.zeros((h, c_out))
        for i in range(h):
            for o in range(c_out):
                acc = bias[o]
                for d in range(win):
                    p = i + d - r
                    if 0 <= p < h:
                        for j in range(c_in):
                            acc += kernels[o, d, j] * x[p, j]
                out[i, o] = acc
        return out

    def test_identity_kernel(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        kernels = np.eye(2).reshape(2, 1, 2)
        y = ad.conv1d_same(Array(x), Array(kernels), Array(np.zeros(2)))
        assert np.array_equal(y.data, x)

    def test_zero_input(self):
        rng = np.random.default_rng(0)
        kernels = rng.normal(size=(3, 3, 2))
        y = ad.conv1d_same(Array(np.zeros((4, 2))), Array(kernels), Array(np.zeros(3)))
        assert np.array_equal(y.data, np.zeros((4, 3)))

    def test_matches_triple_sum_oracle(self):
        rng = np.random.default_rng(42)
        x = rng.normal(size=(4, 2))
        kernels = rng.normal(size=(3, 3, 2))
        bias = rng.normal(size=3)
        y = ad.conv1d_same(Array(x), Array(kernels), Array(bias))
        np.testing.assert_allclose(y.data, self.conv_oracle(x, kernels, bias), atol=1e-12)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            ad.conv1d_same(Array(np.zeros((4, 2))), Array(np.zeros((3, 2, 2))), Array(np.zeros(3)))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            ad.conv1d_same(Array(np.zeros((4, 5))), Array(np.zeros((3, 3, 2))), Array(np.zeros(3)))

    def test_length_preserved_all_odd_windows(self):
        rng = np.random.default_rng(3)
        for h in (1, 2, 5, 9):
            for win in (1, 3, 5, 7):
                x = rng.normal(size=(h, 2))
                k = rng.normal(size=(3, win, 2))
                y = ad.conv1d_same(Array(x), Array(k), Array(np.zeros(3)))
                assert y.shape == (h, 3)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        x = parameter(rng.normal(size=(5, 2)))
        k = parameter(rng.normal(size=(3, 3, 2)))
        b = parameter(rng.normal(size=3))
        w = Array(rng.normal(size=(5, 3)))  # fixed projection to a scalar

        def forward():
            return ad.sum_reduce(ad.conv1d_same(x, k, b) * w)

        report = finite_diff_check(forward, {"x": x, "k": k, "b": b})
        assert report.worst_rel <= 1e-6


class TestBatchNorm:
    def bn_oracle(self, x, gamma, beta, mask, eps=1e-5):
        # per-channel statistics computed directly over the valid cells
        cells = x[mask]
        mu = cells.mean(axis=0)
        var = cells.var(axis=0)
        return gamma * (x - mu) / np.sqrt(var + eps) + beta

    def test_constant_input_collapses_to_beta(self):
        x = np.full((1, 4, 2), 3.7)
        state = BatchNormState(2)
        y = ad.batch_norm(Array(x), Array(np.ones(2)), Array(np.zeros(2)), state)
        assert np.abs(y.data).max() <= 1e-3

    def test_standardized_input_passthrough(self):
        x = np.array([[-1.0, 1.0], [1.0, -1.0]])[:, :, None].repeat(2, axis=2)
        # per channel: mean 0, variance 1
        state = BatchNormState(2)
        y = ad.batch_norm(Array(x), Array(np.ones(2)), Array(np.zeros(2)), state)
        np.testing.assert_allclose(y.data, x, atol=1e-4)

    def test_matches_direct_statistics_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2, 3, 2))
        gamma = rng.normal(size=2)
        beta = rng.normal(size=2)
        state = BatchNormState(2)
        y = ad.batch_norm(Array(x), Array(gamma), Array(beta), state)
        mask = np.ones((2, 3), dtype=bool)
        np.testing.assert_allclose(y.data, self.bn_oracle(x, gamma, beta, mask), atol=1e-10)

    def test_mask_excludes_padding_from_statistics(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(2, 4, 3))
        mask = np.array([[True, True, True, False], [True, True, False, False]])
        x[~mask] = 1e6  # poison the pads; stats must not see them
        state = BatchNormState(3)
        y = ad.batch_norm(Array(x), Array(np.ones(3)), Array(np.zeros(3)), state, mask=mask)
        np.testing.assert_allclose(y.data, self.bn_oracle(x, np.ones(3), np.zeros(3), mask), atol=1e-10)

    def test_eval_before_init_is_state_error(self):
        state = BatchNormState(2)
        with pytest.raises(StateError):
            ad.batch_norm(Array(np.zeros((2, 2))), Array(np.ones(2)), Array(np.zeros(2)), state, mode="eval")

    def test_running_statistics_ema(self):
        rng = np.random.default_rng(9)
        state = BatchNormState(2)
        batches = [rng.normal(size=(1, 5, 2)), rng.normal(size=(1, 5, 2))]
        mus = [b[0].mean(axis=0) for b in batches]
        vars_ = [b[0].var(axis=0) for b in batches]
        for b in batches:
            ad.batch_norm(Array(b), Array(np.ones(2)), Array(np.zeros(2)), state)
        np.testing.assert_allclose(state.mean, 0.9 * mus[0] + 0.1 * mus[1], atol=1e-12)
        np.testing.assert_allclose(state.var, 0.9 * vars_[0] + 0.1 * vars_[1], atol=1e-12)

    def test_eval_mode_uses_running_stats_only(self):
        rng = np.random.default_rng(10)
        state = BatchNormState(2)
        ad.batch_norm(Array(rng.normal(size=(1, 6, 2))), Array(np.ones(2)), Array(np.zeros(2)), state)
        x = rng.normal(size=(1, 3, 2))
        y = ad.batch_norm(Array(x), Array(np.ones(2)), Array(np.zeros(2)), state, mode="eval")
        expect = (x - state.mean) / np.sqrt(state.var + state.eps)
        np.testing.assert_allclose(y.data, expect, atol=1e-12)

    def test_train_gradients_match_finite_differences(self):
        rng = np.random.default_rng(12)
        x = parameter(rng.normal(size=(2, 3, 2)))
        gamma = parameter(rng.normal(size=2) + 1.5)
        beta = parameter(rng.normal(size=2))
        w = Array(rng.normal(size=(2, 3, 2)))
        state = BatchNormState(2)

        def forward():
            y = ad.batch_norm(x, gamma, beta, state, mode="train", update_running=False)
            return ad.sum_reduce(y * w)

        report = finite_diff_check(forward, {"x": x, "gamma": gamma, "beta": beta})
        assert report.worst_rel <= 1e-5

    def test_masked_train_gradients_match_finite_differences(self):
        rng = np.random.default_rng(13)
        x = parameter(rng.normal(size=(2, 4, 2)))
        gamma = parameter(rng.normal(size=2) + 1.5)
        beta = parameter(rng.normal(size=2))
        mask = np.array([[True, True, True, False], [True, True, False, False]])
        w = Array(rng.normal(size=(2, 4, 2)))
        state = BatchNormState(2)

        def forward():
            y = ad.batch_norm(x, gamma, beta, state, mode="train", mask=mask, update_running=False)
            return ad.sum_reduce(y * w)

        report = finite_diff_check(forward, {"x": x, "gamma": gamma, "beta": beta})
        assert report.worst_rel <= 1e-5

    def test_eval_gradients_match_finite_differences(self):
        rng = np.random.default_rng(14)
        state = BatchNormState(2)
        state.mean = rng.normal(size=2)
        state.var = rng.uniform(0.5, 2.0, size=2)
        state.initialized = True
        x = parameter(rng.normal(size=(1, 4, 2)))
        gamma = parameter(rng.normal(size=2) + 1.5)
        beta = parameter(rng.normal(size=2))
        w = Array(rng.normal(size=(1, 4, 2)))

        def forward():
            y = ad.batch_norm(x, gamma, beta, state, mode="eval")
            return ad.sum_reduce(y * w)

        report = finite_diff_check(forward, {"x": x, "gamma": gamma, "beta": beta})
        assert report.worst_rel <= 1e-6


class TestPrelu:
    def test_positive_passthrough(self):
        y = ad.prelu(Array([3.0]), Array([0.7]))
        assert y.data[0] == 3.0

    def test_negative_scaled(self):
        y = ad.prelu(Array([-2.0]), Array([0.25]))
        assert y.data[0] == -0.5

    def test_unit_slope_is_identity(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 3))
        y = ad.prelu(Array(x), Array(np.ones(3)))
        assert np.array_equal(y.data, x)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        x = parameter(nudged(rng, (5, 3)))
        slopes = parameter(np.full(3, 0.25))
        w = Array(rng.normal(size=(5, 3)))

        def forward():
            return ad.sum_reduce(ad.prelu(x, slopes) * w)

        report = finite_diff_check(forward, {"x": x, "slopes": slopes})
        assert report.worst_rel <= 1e-6


class TestPoolSame:
    def pool_oracle(self, x, width):
        h, c = x.shape
        r = (width - 1) // 2
        out = np.empty_like(x)
        for i in range(h):
            lo, hi = max(0, i - r), min(h, i + r + 1)
            out[i] = x[lo:hi].max(axis=0)
        return out

    def test_width_one_identity(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 2))
        y = ad.pool_same(Array(x), 1)
        assert np.array_equal(y.data, x)

    def test_direct_evaluation(self):
        y = ad.pool_same(Array([[1.0], [5.0], [2.0]]), 3)
        assert np.array_equal(y.data.ravel(), [5.0, 5.0, 5.0])

    def test_matches_window_scan_oracle(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(6, 3))
        y = ad.pool_same(Array(x), 3)
        assert np.array_equal(y.data, self.pool_oracle(x, 3))

    def test_even_width_rejected(self):
        with pytest.raises(ConfigError):
            ad.pool_same(Array(np.zeros((4, 2))), 2)

    def test_gradients(self):
        rng = np.random.default_rng(15)
        x = parameter(spaced_column_values(rng, 6, 3))
        w = Array(rng.normal(size=(6, 3)))

        def forward():
            return ad.sum_reduce(ad.pool_same(x, 3) * w)

        report = finite_diff_check(forward, {"x": x})
        assert report.worst_rel <= 1e-6


class TestScaleUnit:
    def test_unit_scale_identity(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=(3, 2))
        y = ad.scale_unit(Array(x), Array(1.0))
        assert np.array_equal(y.data, x)

    def test_zero_scale_and_gradient(self):
        x = Array([[1.0, 2.0], [3.0, 4.0]])
        sc = parameter(0.0)
        up = np.array([[1.0, 1.0], [2.0, 0.5]])
        y = ad.scale_unit(x, sc)
        assert np.array_equal(y.data, np.zeros((2, 2)))
        loss = ad.sum_reduce(y * Array(up))
        backward(loss)
        assert sc.grad == pytest.approx((up * x.data).sum(), abs=1e-15)

    def test_direct_arithmetic(self):
        y = ad.scale_unit(Array([1.0, 2.0, 3.0]), Array(2.0))
        assert np.array_equal(y.data, [2.0, 4.0, 6.0])


class TestSoftmaxMasked:
    def test_uniform_on_equal_scores(self):
        y = ad.softmax_masked(Array(np.zeros(4)))
        np.testing.assert_allclose(y.data, np.full(4, 0.25), atol=1e-15)

    def test_single_valid_position(self):
        mask = np.array([False, True, False])
        y = ad.softmax_masked(Array([5.0, -1.0, 2.0]), mask)
        assert y.data[1] == 1.0
        assert y.data[0] == 0.0 and y.data[2] == 0.0

    def test_reference_values(self):
        # independent scalar evaluation of exp normalization
        e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
        expect = np.array(e) / sum(e)
        y = ad.softmax_masked(Array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(y.data, expect, atol=1e-15)
        np.testing.assert_allclose(
            y.data, [0.09003057317038046, 0.24472847105479767, 0.6652409557748219], atol=1e-12
        )

    def test_sums_to_one_and_masked_exact_zero(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            k = rng.integers(2, 9)
            scores = rng.normal(size=k) * 10
            mask = rng.random(k) < 0.7
            if not mask.any():
                mask[0] = True
            y = ad.softmax_masked(Array(scores), mask).data
            assert abs(y.sum() - 1.0) <= 1e-9
            assert np.all(y[~mask] == 0.0)
            assert np.all(y >= 0.0)

    def test_all_masked_rejected(self):
        with pytest.raises(DomainError):
            ad.softmax_masked(Array([1.0, 2.0]), np.array([False, False]))

    def test_rowwise_gradients(self):
        rng = np.random.default_rng(18)
        x = parameter(rng.normal(size=(3, 4)))
        mask = np.array([[True, True, True, False]] * 3)
        w = Array(rng.normal(size=(3, 4)))

        def forward():
            return ad.sum_reduce(ad.softmax_masked(x, mask) * w)

        report = finite_diff_check(forward, {"x": x})
        assert report.worst_rel <= 1e-5


class TestAffine:
    def test_identity(self):
        x = Array([1.0, -2.0, 3.0])
        y = ad.affine(x, Array(np.eye(3)), Array(np.zeros(3)))
        assert np.array_equal(y.data, x.data)

    def test_zero_input_gives_bias(self):
        b = np.array([0.5, -1.5])
        y = ad.affine(Array(np.zeros(3)), Array(np.zeros((3, 2))), Array(b))
        assert np.array_equal(y.data, b)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(19)
        x = rng.normal(size=3)
        w = rng.normal(size=(3, 2))
        b = rng.normal(size=2)
        expect = np.array([sum(x[i] * w[i, j] for i in range(3)) + b[j] for j in range(2)])
        y = ad.affine(Array(x), Array(w), Array(b))
        np.testing.assert_allclose(y.data, expect, atol=1e-12)

    def test_batched_leading_axes(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(4, 5, 3))
        w = rng.normal(size=(3, 2))
        b = rng.normal(size=2)
        y = ad.affine(Array(x), Array(w), Array(b))
        assert y.shape == (4, 5, 2)
        np.testing.assert_allclose(y.data[2, 1], x[2, 1] @ w + b, atol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(21)
        x = parameter(rng.normal(size=(4, 3)))
        w = parameter(rng.normal(size=(3, 2)))
        b = parameter(rng.normal(size=2))
        p = Array(rng.normal(size=(4, 2)))

        def forward():
            return ad.sum_reduce(ad.affine(x, w, b) * p)

        report = finite_diff_check(forward, {"x": x, "w": w, "b": b})
        assert report.worst_rel <= 1e-6


class TestReduceAndDistance:
    def test_euclidean_coincident_points(self):
        u = parameter(np.array([1.0, 2.0, 3.0]))
        d = ad.euclidean_distance(u, Array([1.0, 2.0, 3.0]))
        assert d.data == 0.0
        backward(d)
        assert np.array_equal(grad_of(u), np.zeros(3))

    def test_dot_arithmetic(self):
        assert ad.dot(Array([1.0, 2.0]), Array([3.0, 4.0])).data == 11.0

    def test_concat_channel_law(self):
        rng = np.random.default_rng(22)
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(4, 5))
        y = ad.concat_channels(Array(a), Array(b))
        assert y.shape == (4, 8)
        assert np.array_equal(y.data[:, :3], a)
        assert np.array_equal(y.data[:, 3:], b)

    def test_concat_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.concat_channels(Array(np.zeros((4, 3))), Array(np.zeros((5, 3))))

    def test_euclidean_rowwise(self):
        rng = np.random.default_rng(23)
        u = rng.normal(size=(4, 3))
        v = rng.normal(size=(4, 3))
        d = ad.euclidean_distance(Array(u), Array(v))
        expect = np.sqrt(((u - v) ** 2).sum(axis=1))
        np.testing.assert_allclose(d.data, expect, atol=1e-12)

    def test_euclidean_gradients(self):
        rng = np.random.default_rng(24)
        u = parameter(rng.normal(size=(3, 4)))
        v = parameter(rng.normal(size=(3, 4)))
        w = Array(rng.normal(size=3))

        def forward():
            return ad.sum_reduce(ad.euclidean_distance(u, v) * w)

        report = finite_diff_check(forward, {"u": u, "v": v})
        assert report.worst_rel <= 1e-5

    def test_sum_reduce_axis(self):
        rng = np.random.default_rng(25)
        x = rng.normal(size=(2, 3, 4))
        y = ad.sum_reduce(Array(x), axis=2)
        np.testing.assert_allclose(y.data, x.sum(axis=2), atol=1e-15)


class TestStackAndBlend:
    def test_stack_shape_and_order(self):
        a = np.ones((2, 3))
        b = 2 * np.ones((2, 3))
        y = ad.stack_maps([Array(a), Array(b)])
        assert y.shape == (2, 2, 3)
        assert np.array_equal(y.data[1], b)

    def test_blend_matches_loop_oracle(self):
        rng = np.random.default_rng(26)
        g = rng.normal(size=(3, 4, 2))
        w = rng.normal(size=(4, 3))
        out = ad.blend_blocks(Array(g), Array(w))
        expect = np.zeros((4, 2))
        for i in range(4):
            for n in range(3):
                expect[i] += w[i, n] * g[n, i]
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_blend_gradients(self):
        rng = np.random.default_rng(27)
        g = parameter(rng.normal(size=(3, 4, 2)))
        w = parameter(rng.normal(size=(4, 3)))
        p = Array(rng.normal(size=(4, 2)))

        def forward():
            return ad.sum_reduce(ad.blend_blocks(g, w) * p)

        report = finite_diff_check(forward, {"g": g, "w": w})
        assert report.worst_rel <= 1e-6


class TestNoGrad:
    def test_no_grad_skips_recording(self):
        x = parameter(np.ones(3))
        with ad.no_grad():
            y = x * 2.0
        assert not y.requires_grad
        z = x * 2.0
        assert z.requires_grad

    def test_no_grad_is_thread_local(self):
        from concurrent.futures import ThreadPoolExecutor

        def scoped_work(_):
            with ad.no_grad():
                v = parameter(np.ones(2)) * 3.0
                assert not v.requires_grad
            return True

        with ThreadPoolExecutor(max_workers=4) as pool:
            assert all(pool.map(scoped_work, range(32)))
        # recording must still be on in this thread afterwards
        assert ad.grad_enabled()
        y = parameter(np.ones(2)) * 2.0
        assert y.requires_grad


class TestBackward:
    def test_sum_gives_ones(self):
        x = parameter(np.arange(6.0).reshape(2, 3))
        backward(ad.sum_reduce(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_prelu_negative_branch_gradient(self):
        x = parameter(np.array([-2.0]))
        slopes = Array([0.25])
        backward(ad.sum_reduce(ad.prelu(x, slopes)))
        assert x.grad[0] == 0.25

    def test_unreachable_parameter_gets_zero(self):
        x = parameter(np.array([1.0, 2.0]))
        orphan = parameter(np.array([5.0]))
        backward(ad.sum_reduce(x * Array([2.0, 2.0])))
        assert np.array_equal(grad_of(orphan), np.zeros(1))
        assert orphan.grad is None

    def test_non_scalar_loss_rejected(self):
        x = parameter(np.array([1.0, 2.0]))
        with pytest.raises(GraphError):
            backward(x * 2.0)

    def test_gradient_accumulates_over_paths(self):
        x = parameter(np.array([3.0]))
        y = x * 2.0
        z = ad.sum_reduce(y + x * x)  # dz/dx = 2 + 2x = 8
        backward(z)
        assert x.grad[0] == pytest.approx(8.0, abs=1e-12)

    def test_random_composite_graph_vs_finite_differences(self):
        rng = np.random.default_rng(28)
        x = parameter(nudged(rng, (4, 3)))
        k = parameter(rng.normal(size=(3, 3, 3)))
        b = parameter(rng.normal(size=3))
        slopes = parameter(np.full(3, 0.25))
        sc = parameter(1.3)
        w = parameter(rng.normal(size=(3, 2)))
        wb = parameter(rng.normal(size=2))

        def forward():
            y = ad.conv1d_same(x, k, b)
            y = ad.prelu(y, slopes)
            y = ad.scale_unit(y, sc)
            y = ad.affine(y, w, wb)
            sm = ad.softmax_masked(y)
            return ad.sum_reduce(ad.euclidean_distance(sm, ad.pool_same(sm, 3)))

        params = {"x": x, "k": k, "b": b, "slopes": slopes, "sc": sc, "w": w, "wb": wb}
        report = finite_diff_check(forward, params, step=1e-5)
        assert report.worst_rel <= 1e-4
