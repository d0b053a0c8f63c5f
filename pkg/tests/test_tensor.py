"""Autodiff core: every op against a slow oracle or finite differences."""

import numpy as np
import pytest

from rootnet import tensor as T


def t64(arr):
    return T.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def naive_conv2d(x, w, b):
    """Six-loop 3x3 same-padding convolution used as the oracle."""
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, cout, h, wd), dtype=x.dtype)
    for ni in range(n):
        for co in range(cout):
            for i in range(h):
                for j in range(wd):
                    acc = b[co]
                    for ci in range(cin):
                        for di in range(3):
                            for dj in range(3):
                                acc += w[co, ci, di, dj] * xp[ni, ci, i + di, j + dj]
                    out[ni, co, i, j] = acc
    return out


class TestConv2d:
    def test_matches_naive_loop(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = T.conv2d(t64(x), t64(w), t64(b)).data
        want = naive_conv2d(x, w, b)
        assert np.allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(1)
        x = t64(rng.standard_normal((1, 2, 5, 6)))
        w = t64(rng.standard_normal((3, 2, 3, 3)))
        b = t64(rng.standard_normal(3))
        err = T.grad_check(lambda x, w, b: T.conv2d(x, w, b), [x, w, b], rng=rng)
        assert err < 1e-6

    def test_shape_errors(self):
        x = t64(np.zeros((1, 2, 4, 4)))
        w = t64(np.zeros((3, 5, 3, 3)))  # channel mismatch
        b = t64(np.zeros(3))
        with pytest.raises(T.ShapeError):
            T.conv2d(x, w, b)


class TestConv1x1:
    def test_is_per_pixel_linear(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 4, 5, 5))
        w = rng.standard_normal((3, 4, 1, 1))
        b = rng.standard_normal(3)
        got = T.conv1x1(t64(x), t64(w), t64(b)).data
        want = np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x) + b[None, :, None, None]
        assert np.allclose(got, want)

    def test_gradcheck(self):
        rng = np.random.default_rng(3)
        x = t64(rng.standard_normal((1, 3, 4, 4)))
        w = t64(rng.standard_normal((2, 3, 1, 1)))
        b = t64(rng.standard_normal(2))
        err = T.grad_check(lambda x, w, b: T.conv1x1(x, w, b), [x, w, b], rng=rng)
        assert err < 1e-6


class TestRelu:
    def test_forward_and_subgradient_zero_at_zero(self):
        x = t64([[-1.0, 0.0, 2.0]])
        y = T.relu(x)
        assert np.array_equal(y.data, [[0.0, 0.0, 2.0]])
        y.backward(np.ones_like(y.data))
        assert np.array_equal(x.grad, [[0.0, 0.0, 1.0]])

    def test_gradcheck_away_from_kink(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 3, 4, 4))
        x[np.abs(x) < 0.1] = 0.5  # keep clear of the nondifferentiable point
        err = T.grad_check(T.relu, [t64(x)], rng=rng)
        assert err < 1e-6


class TestMaxpool2:
    def test_matches_window_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 6, 8))
        y, _ = T.maxpool2(t64(x))
        want = x.reshape(2, 3, 3, 2, 4, 2).max(axis=(3, 5))
        assert np.array_equal(y.data, want)

    def test_tie_routes_to_first_index(self):
        x = t64(np.full((1, 1, 2, 2), 7.0))
        y, _ = T.maxpool2(x)
        y.backward(np.ones_like(y.data))
        want = np.zeros((1, 1, 2, 2))
        want[0, 0, 0, 0] = 1.0  # row-major first occupant of the window
        assert np.array_equal(x.grad, want)

    def test_gradcheck_distinct_entries(self):
        rng = np.random.default_rng(6)
        x = rng.permutation(64).astype(np.float64).reshape(1, 1, 8, 8)
        err = T.grad_check(lambda x: T.maxpool2(x)[0], [t64(x)], rng=rng)
        assert err < 1e-6

    def test_odd_size_rejected(self):
        with pytest.raises(T.ShapeError):
            T.maxpool2(t64(np.zeros((1, 1, 5, 4))))


class TestTransposeConv2:
    def test_doubles_spatial_dims(self):
        rng = np.random.default_rng(7)
        x = t64(rng.standard_normal((1, 4, 3, 5)))
        w = t64(rng.standard_normal((4, 2, 2, 2)))
        b = t64(rng.standard_normal(2))
        y = T.transpose_conv2(x, w, b)
        assert y.data.shape == (1, 2, 6, 10)

    def test_adjoint_of_strided_conv(self):
        """<conv_T(x), y> == <x, conv(y)> with zero bias - exact identity."""
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 3, 4, 4))
        w = rng.standard_normal((3, 2, 2, 2))
        y = rng.standard_normal((1, 2, 8, 8))
        up = T.transpose_conv2(t64(x), t64(w), t64(np.zeros(2))).data
        dn = T.strided_conv2(t64(y), t64(w)).data
        assert np.isclose((up * y).sum(), (x * dn).sum(), rtol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(9)
        x = t64(rng.standard_normal((1, 3, 3, 4)))
        w = t64(rng.standard_normal((3, 2, 2, 2)))
        b = t64(rng.standard_normal(2))
        err = T.grad_check(lambda x, w, b: T.transpose_conv2(x, w, b), [x, w, b], rng=rng)
        assert err < 1e-6


class TestConcat:
    def test_forward_and_grad_split(self):
        rng = np.random.default_rng(10)
        a = t64(rng.standard_normal((1, 2, 3, 3)))
        b = t64(rng.standard_normal((1, 4, 3, 3)))
        y = T.concat_channels(a, b)
        assert y.data.shape == (1, 6, 3, 3)
        g = rng.standard_normal(y.data.shape)
        y.backward(g)
        assert np.array_equal(a.grad, g[:, :2])
        assert np.array_equal(b.grad, g[:, 2:])

    def test_spatial_mismatch_rejected(self):
        a = t64(np.zeros((1, 2, 3, 3)))
        b = t64(np.zeros((1, 2, 4, 3)))
        with pytest.raises(T.ShapeError):
            T.concat_channels(a, b)


class TestSigmoidAndLoss:
    def test_sigmoid_stable_at_extremes(self):
        x = t64([[-1e4, 0.0, 1e4]])
        y = T.sigmoid(x)
        assert np.all(np.isfinite(y.data))
        assert np.isclose(y.data[0, 1], 0.5)
        assert y.data[0, 0] >= 0.0 and y.data[0, 2] <= 1.0

    def test_sigmoid_gradcheck(self):
        rng = np.random.default_rng(11)
        err = T.grad_check(T.sigmoid, [t64(rng.standard_normal((2, 5)))], rng=rng)
        assert err < 1e-6

    def test_bce_matches_formula(self):
        rng = np.random.default_rng(12)
        z = rng.standard_normal((1, 1, 4, 4))
        y = (rng.random((1, 1, 4, 4)) > 0.5).astype(np.float64)
        got = T.weighted_bce(t64(z), y, pos_weight=3.0).data
        p = 1.0 / (1.0 + np.exp(-z))
        want = -(3.0 * y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
        assert np.isclose(float(got), want, rtol=1e-10)

    def test_bce_stable_for_huge_logits(self):
        z = t64(np.array([[1e4, -1e4]]))
        y = np.array([[1.0, 0.0]])
        loss = T.weighted_bce(z, y)
        assert np.isfinite(float(loss.data))
        assert float(loss.data) < 1e-9  # both predictions are right

    def test_bce_gradcheck(self):
        rng = np.random.default_rng(13)
        z = t64(rng.standard_normal((1, 1, 3, 3)))
        y = (rng.random((1, 1, 3, 3)) > 0.7).astype(np.float64)
        err = T.grad_check(lambda z: T.weighted_bce(z, y, pos_weight=20.0), [z], rng=rng)
        assert err < 1e-6

    def test_pos_weight_scales_positive_term_only(self):
        z = t64(np.array([[2.0]]))
        y1 = np.array([[1.0]])
        y0 = np.array([[0.0]])
        l1a = float(T.weighted_bce(t64(np.array([[2.0]])), y1, pos_weight=1.0).data)
        l1b = float(T.weighted_bce(z, y1, pos_weight=5.0).data)
        assert np.isclose(l1b, 5.0 * l1a, rtol=1e-12)
        l0a = float(T.weighted_bce(t64(np.array([[2.0]])), y0, pos_weight=1.0).data)
        l0b = float(T.weighted_bce(t64(np.array([[2.0]])), y0, pos_weight=5.0).data)
        assert np.isclose(l0b, l0a, rtol=1e-12)


class TestClassifierOps:
    def test_global_avg_pool(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((2, 3, 4, 5))
        y = T.global_avg_pool(t64(x))
        assert np.allclose(y.data, x.mean(axis=(2, 3)))

    def test_linear_and_softmax_ce_gradcheck(self):
        rng = np.random.default_rng(15)
        x = t64(rng.standard_normal((4, 6)))
        w = t64(rng.standard_normal((3, 6)))
        b = t64(rng.standard_normal(3))
        labels = np.array([0, 1, 2, 1])

        def fn(x, w, b):
            return T.softmax_cross_entropy(T.linear(x, w, b), labels)

        err = T.grad_check(fn, [x, w, b], rng=rng)
        assert err < 1e-6


class TestSgdMomentum:
    def test_two_steps_match_hand_computation(self):
        p = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        state = T.OptState(lr=0.1, momentum=0.5, velocity=np.zeros(2))
        p.grad = np.array([1.0, -1.0])
        T.sgd_momentum_step(p, state)
        # v = 0.5*0 + g = g; p -= 0.1*v
        assert np.allclose(p.data, [0.9, 2.1])
        p.grad = np.array([1.0, -1.0])
        T.sgd_momentum_step(p, state)
        # v = 0.5*g + g = 1.5g
        assert np.allclose(p.data, [0.9 - 0.15, 2.1 + 0.15])

    def test_zero_momentum_is_plain_sgd(self):
        p = T.Tensor(np.array([3.0]), requires_grad=True)
        state = T.OptState(lr=0.2, momentum=0.0, velocity=np.zeros(1))
        p.grad = np.array([2.0])
        T.sgd_momentum_step(p, state)
        assert np.allclose(p.data, [3.0 - 0.4])


class TestBackwardGraph:
    def test_reused_node_accumulates_grad(self):
        rng = np.random.default_rng(16)
        x = t64(rng.standard_normal((1, 2, 3, 3)))
        y = T.concat_channels(x, x)
        g = rng.standard_normal(y.data.shape)
        y.backward(g)
        assert np.allclose(x.grad, g[:, :2] + g[:, 2:])

    def test_deep_chain_no_recursion_limit(self):
        x = t64(np.ones((1, 1, 2, 2)))
        y = x
        for _ in range(3000):
            y = T.relu(y)
        y.backward(np.ones_like(y.data))
        assert np.array_equal(x.grad, np.ones((1, 1, 2, 2)))
