import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lskt import autograd as ag
from lskt.autograd import Tensor
from lskt.errors import ContractError, DimensionError, EmptyAttentionError, VocabularyError

from conftest import numeric_grad, rel_err


def param(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = ag.matmul(np.eye(2), np.array([[3.0, 1.0], [4.0, 1.0]]))
        np.testing.assert_array_equal(out.data, [[3, 1], [4, 1]])

    def test_zero_annihilates(self, rng):
        out = ag.matmul(np.zeros((3, 2)), rng.normal(size=(2, 4)))
        np.testing.assert_array_equal(out.data, np.zeros((3, 4)))

    def test_matches_loop_oracle(self, rng):
        a, b = rng.normal(size=(3, 2)), rng.normal(size=(2, 4))
        expected = np.zeros((3, 4))
        for i in range(3):
            for j in range(4):
                for p in range(2):
                    expected[i, j] += a[i, p] * b[p, j]
        np.testing.assert_allclose(ag.matmul(a, b).data, expected, atol=1e-12)

    def test_shape_error_names_both(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ag.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_vector_and_batched_gradients(self, rng):
        W = param(rng.normal(size=(3, 2)))
        v = param(rng.normal(size=3))
        X = param(rng.normal(size=(2, 4, 3)))

        def loss():
            return ag.add(ag.sum(ag.matmul(v, W)), ag.sum(ag.mul(ag.matmul(X, W), ag.matmul(X, W))))

        W.zero_grad(), v.zero_grad(), X.zero_grad()
        ag.backward(loss())
        for t in (W, v, X):
            num = numeric_grad(lambda: float(loss().data), t.data)
            assert rel_err(t.grad, num) < 1e-6


class TestConcat:
    def test_values(self):
        np.testing.assert_array_equal(ag.concat_last(np.array([1.0, 2.0]), np.array([3.0])).data, [1, 2, 3])

    def test_empty_is_identity(self):
        x = np.array([[1.0, 2.0]])
        np.testing.assert_array_equal(ag.concat_last(x, np.zeros((1, 0))).data, x)

    def test_sum_gradient_is_ones(self, rng):
        a, b = param(rng.normal(size=(2, 3))), param(rng.normal(size=(2, 5)))
        ag.backward(ag.sum(ag.concat_last(a, b)))
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))
        np.testing.assert_array_equal(b.grad, np.ones((2, 5)))

    def test_leading_mismatch(self):
        with pytest.raises(DimensionError):
            ag.concat_last(np.ones((2, 3)), np.ones((3, 3)))


class TestMaskedSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ag.masked_softmax(np.zeros(3), np.ones(3, bool)).data, [1 / 3] * 3)

    def test_one_hot(self):
        out = ag.masked_softmax(np.array([5.0, 7.0, 9.0]), np.array([False, True, False])).data
        np.testing.assert_array_equal(out, [0.0, 1.0, 0.0])

    def test_direct_formula(self):
        l = np.array([1.0, 2.0, 3.0])
        np.testing.assert_allclose(
            ag.masked_softmax(l, np.ones(3, bool)).data, np.exp(l) / np.exp(l).sum(), atol=1e-12
        )

    def test_all_masked_raises(self):
        with pytest.raises(EmptyAttentionError, match="empty attention window"):
            ag.masked_softmax(np.zeros(3), np.zeros(3, bool))

    @given(
        st.lists(st.floats(-30, 30), min_size=1, max_size=12),
        st.lists(st.booleans(), min_size=12, max_size=12),
        st.floats(-50, 50),
    )
    def test_properties(self, logits, mask, shift):
        l = np.array(logits)
        m = np.array(mask[: len(l)])
        m[0] = True
        out = ag.masked_softmax(l, m).data
        assert abs(out.sum() - 1.0) <= 1e-12
        assert (out[~m] == 0.0).all()
        shifted = ag.masked_softmax(np.where(m, l + shift, l), m).data
        np.testing.assert_allclose(shifted, out, atol=1e-12)

    def test_gradient(self, rng):
        l = param(rng.normal(size=(2, 5)))
        m = np.array([[1, 1, 0, 1, 0], [0, 1, 1, 1, 1]], dtype=bool)
        w = rng.normal(size=(2, 5))
        f = lambda: ag.sum(ag.mul(ag.masked_softmax(l, m), w))
        ag.backward(f())
        assert rel_err(l.grad, numeric_grad(lambda: float(f().data), l.data)) < 1e-6


def conv_oracle(y, kernel, dilation):
    L, M = y.shape[0], kernel.shape[0]
    out = np.zeros((L, kernel.shape[2]))
    for t in range(L):
        for m in range(M):
            src = t - m * dilation
            if src >= 0:
                out[t] += y[src] @ kernel[M - 1 - m]
    return out


class TestCausalConv:
    def test_current_tap_identity(self):
        out = ag.causal_conv1d(np.array([[1.0], [2.0], [3.0]]), np.array([0.0, 0.0, 1.0]).reshape(3, 1, 1), 1)
        np.testing.assert_array_equal(out.data.ravel(), [1, 2, 3])

    def test_running_window_sum(self):
        out = ag.causal_conv1d(np.array([[1.0], [2.0], [3.0]]), np.ones((3, 1, 1)), 1)
        np.testing.assert_array_equal(out.data.ravel(), [1, 3, 6])

    def test_matches_loop_oracle(self, rng):
        y, k = rng.normal(size=(16, 3)), rng.normal(size=(3, 3, 2))
        np.testing.assert_allclose(ag.causal_conv1d(y, k, 2).data, conv_oracle(y, k, 2), atol=1e-12)

    def test_batched_matches_oracle(self, rng):
        y, k = rng.normal(size=(2, 10, 3)), rng.normal(size=(3, 3, 3))
        out = ag.causal_conv1d(y, k, 4).data
        for b in range(2):
            np.testing.assert_allclose(out[b], conv_oracle(y[b], k, 4), atol=1e-12)

    @given(st.integers(0, 14), st.integers(1, 4))
    @settings(max_examples=30)
    def test_causality(self, t, dilation):
        rng = np.random.default_rng(t * 10 + dilation)
        y, k = rng.normal(size=(16, 2)), rng.normal(size=(3, 2, 2))
        base = ag.causal_conv1d(y, k, dilation).data
        y2 = y.copy()
        y2[t + 1 :] += rng.normal(size=y2[t + 1 :].shape)
        after = ag.causal_conv1d(y2, k, dilation).data
        assert np.array_equal(base[: t + 1], after[: t + 1])

    def test_gradient(self, rng):
        y, k = param(rng.normal(size=(2, 7, 3))), param(rng.normal(size=(3, 3, 2)))
        w = rng.normal(size=(2, 7, 2))
        f = lambda: ag.sum(ag.mul(ag.causal_conv1d(y, k, 2), w))
        ag.backward(f())
        for t in (y, k):
            assert rel_err(t.grad, numeric_grad(lambda: float(f().data), t.data)) < 1e-6


class TestLayerNorm:
    def test_constant_collapses(self):
        out = ag.layer_norm(np.full(4, 3.0), np.ones(4), np.zeros(4)).data
        np.testing.assert_array_equal(out, np.zeros(4))

    def test_standardized_input(self):
        out = ag.layer_norm(np.array([-1.0, 1.0]), np.ones(2), np.zeros(2)).data
        np.testing.assert_allclose(out, [-1, 1], atol=1e-5)

    def test_moments(self, rng):
        out = ag.layer_norm(rng.normal(3, 5, size=8), np.ones(8), np.zeros(8)).data
        assert abs(out.mean()) < 1e-9
        assert abs(out.var() - 1.0) < 1e-4

    def test_gradient(self, rng):
        x, g, b = param(rng.normal(size=(3, 6))), param(rng.normal(size=6)), param(rng.normal(size=6))
        w = rng.normal(size=(3, 6))
        f = lambda: ag.sum(ag.mul(ag.layer_norm(x, g, b), w))
        ag.backward(f())
        for t in (x, g, b):
            assert rel_err(t.grad, numeric_grad(lambda: float(f().data), t.data)) < 1e-5


class TestWeightNorm:
    def test_already_unit_scaled(self):
        np.testing.assert_allclose(ag.weight_norm(np.array([3.0, 4.0]), np.array([5.0])).data, [3, 4])

    def test_axis_direction(self):
        np.testing.assert_allclose(ag.weight_norm(np.array([1.0, 0.0]), np.array([2.0])).data, [2, 0])

    def test_zero_direction_is_finite(self):
        out = ag.weight_norm(np.zeros(3), np.array([1.0])).data
        assert np.isfinite(out).all()

    def test_gradient(self, rng):
        v, g = param(rng.normal(size=(3, 2, 2))), param([1.7])
        w = rng.normal(size=(3, 2, 2))
        f = lambda: ag.sum(ag.mul(ag.weight_norm(v, g), w))
        ag.backward(f())
        for t in (v, g):
            assert rel_err(t.grad, numeric_grad(lambda: float(f().data), t.data)) < 1e-5


class TestElementwise:
    def test_sigmoid_zero(self):
        assert ag.sigmoid(np.array(0.0)).data == 0.5

    def test_sigmoid_extremes_finite(self):
        out = ag.sigmoid(np.array([-800.0, 800.0])).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    def test_relu(self):
        np.testing.assert_array_equal(ag.relu(np.array([-2.0, 0.0, 3.0])).data, [0, 0, 3])

    def test_dropout_eval_identity(self, rng):
        x = Tensor(rng.normal(size=5))
        assert ag.dropout(x, 0.5, train=False) is x

    def test_dropout_train_scaling(self):
        rng = np.random.default_rng(0)
        out = ag.dropout(np.ones(100_000), 0.25, train=True, rng=rng).data
        kept = out != 0
        assert abs(kept.mean() - 0.75) < 0.01
        np.testing.assert_allclose(out[kept], 1 / 0.75)

    def test_dropout_rate_bound(self):
        with pytest.raises(ContractError):
            ag.dropout(np.ones(2), 1.0, train=True, rng=np.random.default_rng(0))


class TestBackward:
    def test_power_rule(self):
        x = param(3.0)
        ag.backward(ag.mul(x, x))
        assert x.grad == 6.0

    def test_sigmoid_composite_finite_differences(self, rng):
        W, x = param(rng.normal(size=(3, 4))), rng.normal(size=(4, 2))
        f = lambda: ag.sum(ag.sigmoid(ag.matmul(W, x)))
        ag.backward(f())
        assert rel_err(W.grad, numeric_grad(lambda: float(f().data), W.data)) <= 1e-4

    def test_accumulation_doubles(self, rng):
        W = param(rng.normal(size=(2, 2)))
        loss = ag.sum(ag.sigmoid(ag.matmul(W, W)))
        ag.backward(loss)
        once = W.grad.copy()
        ag.backward(loss)
        np.testing.assert_array_equal(W.grad, 2 * once)

    def test_non_scalar_rejected(self):
        with pytest.raises(ContractError):
            ag.backward(ag.mul(param([1.0, 2.0]), 2.0))

    def test_unused_parameter_stays_zero(self):
        a, b = param([1.0]), param([2.0])
        ag.backward(ag.sum(ag.mul(a, a)))
        np.testing.assert_array_equal(b.grad, [0.0])

    def test_take_out_of_range(self):
        with pytest.raises(VocabularyError):
            ag.take(param(np.zeros((3, 2))), np.array([0, 3]))

    def test_take_repeated_index_accumulates(self):
        table = param(np.zeros((3, 2)))
        ag.backward(ag.sum(ag.take(table, np.array([1, 1, 2]))))
        np.testing.assert_array_equal(table.grad, [[0, 0], [2, 2], [1, 1]])

    @given(st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_random_composite_soundness(self, seed):
        rng = np.random.default_rng(seed)
        W1 = param(rng.normal(size=(4, 3)))
        W2 = param(rng.normal(size=(6, 2)))
        kern = param(rng.normal(size=(2, 3, 3)))
        gain = param(rng.uniform(0.5, 1.5, size=3))
        x = rng.normal(size=(2, 5, 4))
        mask = np.tril(np.ones((5, 5), bool))

        def f():
            h = ag.matmul(x, W1)
            h = ag.layer_norm(ag.causal_conv1d(h, kern, 1), gain, np.zeros(3))
            att = ag.masked_softmax(ag.matmul(h, ag.transpose_last(h)), mask)
            z = ag.concat_last(ag.matmul(att, h), ag.sigmoid(h))
            return ag.mean(ag.log(ag.sigmoid(ag.matmul(z, W2))))

        for p in (W1, W2, kern, gain):
            p.zero_grad()
        ag.backward(f())
        for p in (W1, W2, kern, gain):
            assert rel_err(p.grad, numeric_grad(lambda: float(f().data), p.data)) <= 1e-4
