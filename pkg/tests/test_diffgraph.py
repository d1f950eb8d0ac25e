"""Tests for the reverse-mode autodiff layer.

Every operation type gets a central finite-difference gradient check
(step 1e-6, tolerance 1e-5); the named forward examples are asserted
directly.
"""

import math

import numpy as np
import pytest

from _gradcheck import check_grads, fd_gradients

from enfc import diffgraph as dg
from enfc.errors import DomainError, StructuralError
from enfc.randdist import RngState

EULER_MASCHERONI = 0.5772156649015329


def scalarize(t, weights=None):
    # reduce any tensor to a scalar through graph ops so FD sees all outputs
    flat = dg.reshape(t, (1, -1))
    n = flat.data.shape[-1]
    if weights is None:
        weights = np.ones(n)
    w = dg.constant(np.asarray(weights, dtype=float).reshape(n, 1))
    return dg.reshape(dg.matmul(flat, w), ())


class TestForward:
    def test_identity_graph(self):
        x = dg.constant([1.0, 2.0, 3.0])
        out = dg.reshape(x, (3,))
        np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])

    def test_linear_identity_map(self):
        x = dg.constant(np.array([[1.0, 2.0, 3.0]]))
        w = dg.constant(np.eye(3))
        b = dg.constant(np.zeros(3))
        out = dg.add(dg.matmul(x, w), b)
        np.testing.assert_allclose(out.data, [[1.0, 2.0, 3.0]], rtol=0, atol=0)

    def test_stacked_leaky_relu_slope_composition(self):
        x = dg.constant([-1.0, 2.0])
        out = dg.leaky_relu(dg.leaky_relu(x))
        np.testing.assert_allclose(out.data, [-0.0001, 2.0], rtol=1e-15)

    def test_forward_bitwise_deterministic(self):
        rng = np.random.default_rng(5)
        w = dg.parameter(rng.normal(size=(6, 6)), "w")
        x = dg.constant(rng.normal(size=(4, 6)))

        def run(seed):
            h = dg.dropout(dg.leaky_relu(dg.matmul(x, w)), 0.3, RngState(seed), train=True)
            return h.data

        np.testing.assert_array_equal(run(11), run(11))
        assert not np.array_equal(run(11), run(12))

    def test_matmul_shape_mismatch(self):
        with pytest.raises(StructuralError):
            dg.matmul(dg.constant(np.zeros((2, 3))), dg.constant(np.zeros((4, 2))))


class TestBackward:
    def test_linear_gradient_outer_structure(self):
        # loss = sum of x @ W, so dL/dW[k, n] = sum_b x[b, k] for every n
        rng = np.random.default_rng(0)
        xv = rng.normal(size=(4, 3))
        w = dg.parameter(rng.normal(size=(3, 2)), "w")
        loss = scalarize(dg.matmul(dg.constant(xv), w))
        dg.backward(loss)
        expected = np.outer(xv.sum(axis=0), np.ones(2))
        np.testing.assert_allclose(w.grad, expected, rtol=1e-12)

    def test_backward_requires_scalar(self):
        w = dg.parameter(np.ones((2, 2)), "w")
        with pytest.raises(StructuralError):
            dg.backward(dg.leaky_relu(w))

    def test_three_layer_network_finite_differences(self):
        rng = np.random.default_rng(42)
        x = dg.constant(rng.normal(size=(4, 5)))
        target = rng.integers(1, 50, size=4).astype(float)
        params = [
            dg.parameter(rng.normal(size=(5, 8)) * 0.5, "w1"),
            dg.parameter(rng.normal(size=8) * 0.1, "b1"),
            dg.parameter(rng.normal(size=(8, 6)) * 0.5, "w2"),
            dg.parameter(rng.normal(size=6) * 0.1, "b2"),
            dg.parameter(rng.normal(size=(6, 1)) * 0.5, "w3"),
            dg.parameter(rng.normal(size=1) * 0.1, "b3"),
        ]

        def build():
            w1, b1, w2, b2, w3, b3 = params
            h = dg.leaky_relu(dg.add(dg.matmul(x, w1), b1))
            h = dg.leaky_relu(dg.add(dg.matmul(h, w2), b2))
            pred = dg.reshape(dg.add(dg.matmul(h, w3), b3), (4,))
            return dg.l1_log_loss(pred, target)

        check_grads(build, params)

    def test_gradients_accumulate_across_reuse(self):
        # the same parameter feeding two paths gets the sum of both gradients
        w = dg.parameter(np.array([[2.0]]), "w")
        prod = dg.matmul(w, w)  # w^2
        loss = dg.reshape(prod, ())
        dg.backward(loss)
        np.testing.assert_allclose(w.grad, [[4.0]], rtol=1e-14)


class TestGradientCheckPerOp:
    """Spec invariant: every op type passes a randomized FD comparison."""

    def setup_method(self):
        self.rng = np.random.default_rng(7)

    def test_add_with_bias_broadcast(self):
        x = dg.parameter(self.rng.normal(size=(3, 4)), "x")
        b = dg.parameter(self.rng.normal(size=4), "b")
        wv = self.rng.normal(size=12)
        check_grads(lambda: scalarize(dg.add(x, b), wv), [x, b])

    def test_matmul_2d(self):
        x = dg.parameter(self.rng.normal(size=(3, 4)), "x")
        w = dg.parameter(self.rng.normal(size=(4, 2)), "w")
        wv = self.rng.normal(size=6)
        check_grads(lambda: scalarize(dg.matmul(x, w), wv), [x, w])

    def test_matmul_batched_input(self):
        x = dg.parameter(self.rng.normal(size=(2, 3, 4)), "x")
        w = dg.parameter(self.rng.normal(size=(4, 2)), "w")
        wv = self.rng.normal(size=12)
        check_grads(lambda: scalarize(dg.matmul(x, w), wv), [x, w])

    def test_batched_matmul(self):
        a = dg.parameter(self.rng.normal(size=(2, 3, 4)), "a")
        b = dg.parameter(self.rng.normal(size=(2, 4, 2)), "b")
        wv = self.rng.normal(size=12)
        check_grads(lambda: scalarize(dg.batched_matmul(a, b), wv), [a, b])

    def test_scale(self):
        x = dg.parameter(self.rng.normal(size=(2, 5)), "x")
        wv = self.rng.normal(size=10)
        check_grads(lambda: scalarize(dg.scale(x, 0.37), wv), [x])

    def test_reshape_and_transpose(self):
        x = dg.parameter(self.rng.normal(size=(2, 3, 4)), "x")
        wv = self.rng.normal(size=24)

        def build():
            t = dg.transpose(dg.reshape(x, (2, 4, 3)), (1, 0, 2))
            return scalarize(t, wv)

        check_grads(build, [x])

    def test_stack_axis1(self):
        a = dg.parameter(self.rng.normal(size=(3, 4)), "a")
        b = dg.parameter(self.rng.normal(size=(3, 4)), "b")
        wv = self.rng.normal(size=24)
        check_grads(lambda: scalarize(dg.stack1([a, b]), wv), [a, b])

    def test_concat_last(self):
        a = dg.parameter(self.rng.normal(size=(2, 3)), "a")
        b = dg.parameter(self.rng.normal(size=(2, 1)), "b")
        c = dg.parameter(self.rng.normal(size=(2, 2)), "c")
        wv = self.rng.normal(size=12)
        check_grads(lambda: scalarize(dg.concat_last([a, b, c]), wv), [a, b, c])

    def test_leaky_relu(self):
        # keep values away from the kink so FD is valid
        vals = self.rng.normal(size=(3, 4))
        vals = np.where(np.abs(vals) < 0.05, 0.5, vals)
        x = dg.parameter(vals, "x")
        wv = self.rng.normal(size=12)
        check_grads(lambda: scalarize(dg.leaky_relu(x), wv), [x])

    def test_exp(self):
        x = dg.parameter(self.rng.normal(size=(2, 3)) * 0.5, "x")
        wv = self.rng.normal(size=6)
        check_grads(lambda: scalarize(dg.exp(x), wv), [x])

    def test_dropout_train_mode(self):
        x = dg.parameter(self.rng.normal(size=(4, 5)), "x")
        wv = self.rng.normal(size=20)
        # rebuilding with the same seed reproduces the mask, so FD is exact
        check_grads(
            lambda: scalarize(dg.dropout(x, 0.3, RngState(11), train=True), wv),
            [x])

    def test_layer_norm(self):
        x = dg.parameter(self.rng.normal(size=(3, 6)), "x")
        gain = dg.parameter(1.0 + 0.1 * self.rng.normal(size=6), "g")
        bias = dg.parameter(0.1 * self.rng.normal(size=6), "b")
        wv = self.rng.normal(size=18)
        check_grads(lambda: scalarize(dg.layer_norm(x, gain, bias), wv),
                    [x, gain, bias])

    def test_softmax_last(self):
        x = dg.parameter(self.rng.normal(size=(2, 5)), "x")
        wv = self.rng.normal(size=10)
        check_grads(lambda: scalarize(dg.softmax_last(x), wv), [x])

    def test_multi_head_attention(self):
        b, d, heads = 2, 8, 2
        q = dg.parameter(self.rng.normal(size=(b, 1, d)), "q")
        kv = dg.parameter(self.rng.normal(size=(b, 2, d)), "kv")
        mats = [dg.parameter(self.rng.normal(size=(d, d)) * 0.4, nm)
                for nm in ("wq", "wk", "wv", "wo")]
        wv_ = self.rng.normal(size=b * d)

        def build():
            out = dg.multi_head_attention(q, kv, heads, *mats)
            return scalarize(out, wv_)

        check_grads(build, [q, kv] + mats)

    def test_l1_log_loss_gradient(self):
        pred = dg.parameter(self.rng.normal(size=6) + 2.0, "p")
        target = self.rng.integers(1, 40, size=6).astype(float)
        check_grads(lambda: dg.l1_log_loss(pred, target), [pred])

    def test_gamma_nll_gradients(self):
        s = dg.parameter(self.rng.normal(size=5) * 0.3, "s")
        r = dg.parameter(self.rng.normal(size=5) * 0.3, "r")
        target = self.rng.uniform(0.5, 6.0, size=5)
        check_grads(lambda: dg.gamma_nll_loss(s, r, target), [s, r])


class TestAttention:
    def test_identical_key_rows_return_value_row(self):
        # uniform softmax over identical rows averages identical values
        d = 4
        row = np.array([0.4, -1.2, 2.0, 0.3])
        q = dg.constant(np.array([[[0.5, 0.1, -0.7, 1.0]]]))
        kv = dg.constant(np.stack([row, row])[None])
        eye = dg.constant(np.eye(d))
        out = dg.multi_head_attention(q, kv, 1, eye, eye, eye, eye)
        np.testing.assert_allclose(out.data[0, 0], row, rtol=0, atol=1e-12)

    def test_hand_computed_single_head(self):
        qv = np.array([[[0.3, -0.7]]])
        kvv = np.array([[[1.0, 0.5], [-0.2, 1.5]]])
        wq = np.array([[0.5, 0.0], [0.0, 2.0]])
        wk = np.array([[1.0, 1.0], [0.0, 1.0]])
        wv = np.array([[1.0, 0.0], [1.0, 1.0]])
        wo = np.array([[2.0, 0.0], [0.0, 0.5]])
        out = dg.multi_head_attention(
            dg.constant(qv), dg.constant(kvv), 1,
            dg.constant(wq), dg.constant(wk), dg.constant(wv), dg.constant(wo))

        qm = qv[0] @ wq
        km = kvv[0] @ wk
        vm = kvv[0] @ wv
        scores = (qm @ km.T) / math.sqrt(2.0)
        e = np.exp(scores - scores.max())
        weights = e / e.sum()
        expected = (weights @ vm) @ wo
        np.testing.assert_allclose(out.data[0], expected, rtol=1e-12)

    def test_four_heads_output_shape(self):
        rng = np.random.default_rng(3)
        b, d = 5, 64
        q = dg.constant(rng.normal(size=(b, 1, d)))
        kv = dg.constant(rng.normal(size=(b, 2, d)))
        mats = [dg.constant(rng.normal(size=(d, d)) * 0.1) for _ in range(4)]
        out = dg.multi_head_attention(q, kv, 4, *mats)
        assert out.data.shape == (b, 1, d)

    def test_softmax_weight_rows_sum_to_one(self):
        rng = np.random.default_rng(9)
        b, d = 3, 16
        q = dg.constant(rng.normal(size=(b, 1, d)))
        kv = dg.constant(rng.normal(size=(b, 2, d)))
        mats = [dg.constant(rng.normal(size=(d, d))) for _ in range(4)]
        _, weights = dg.multi_head_attention(q, kv, 4, *mats, return_weights=True)
        sums = weights.data.sum(axis=-1)
        np.testing.assert_allclose(sums, np.ones_like(sums), rtol=0, atol=1e-12)

    def test_width_not_divisible_by_heads(self):
        q = dg.constant(np.zeros((1, 1, 6)))
        kv = dg.constant(np.zeros((1, 2, 6)))
        eye = dg.constant(np.eye(6))
        with pytest.raises(StructuralError):
            dg.multi_head_attention(q, kv, 4, eye, eye, eye, eye)


class TestLayerNorm:
    def _affine(self, n):
        return dg.constant(np.ones(n)), dg.constant(np.zeros(n))

    def test_arithmetic_sequence(self):
        gain, bias = self._affine(3)
        out = dg.layer_norm(dg.constant([[1.0, 2.0, 3.0]]), gain, bias)
        np.testing.assert_allclose(out.data[0], [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_constant_row_epsilon_guard(self):
        gain, bias = self._affine(3)
        out = dg.layer_norm(dg.constant([[5.0, 5.0, 5.0]]), gain, bias)
        np.testing.assert_allclose(out.data[0], [0.0, 0.0, 0.0], atol=0)

    def test_random_row_moments(self):
        rng = np.random.default_rng(21)
        gain, bias = self._affine(64)
        out = dg.layer_norm(dg.constant(rng.normal(2.0, 5.0, size=(1, 64))), gain, bias)
        assert abs(out.data.mean()) <= 1e-9
        assert abs(out.data.var() - 1.0) <= 1e-3

    def test_needs_width_two(self):
        gain, bias = self._affine(1)
        with pytest.raises(StructuralError):
            dg.layer_norm(dg.constant([[1.0]]), gain, bias)


class TestL1LogLoss:
    def test_perfect_prediction(self):
        target = np.array([3.0, 9.0])
        pred = dg.constant(np.log1p(target))
        assert float(dg.l1_log_loss(pred, target).data) == 0.0

    def test_unit_error(self):
        loss = dg.l1_log_loss(dg.constant([0.0]), np.array([math.e - 1.0]))
        np.testing.assert_allclose(float(loss.data), 1.0, rtol=1e-15)

    def test_batch_mean(self):
        target = np.array([1.5, 3.0])
        pred = dg.constant([math.log(2.5), math.log(4.0) - 2.0])
        np.testing.assert_allclose(float(dg.l1_log_loss(pred, target).data), 1.0,
                                   rtol=1e-14)

    def test_non_finite_rejected(self):
        from enfc.errors import NumericError
        with pytest.raises(NumericError):
            dg.l1_log_loss(dg.constant([np.nan]), np.array([1.0]))


class TestGammaNllLoss:
    def test_unit_params_unit_target(self):
        loss = dg.gamma_nll_loss(dg.constant([0.0]), dg.constant([0.0]),
                                 np.array([1.0]))
        np.testing.assert_allclose(float(loss.data), 1.0, rtol=1e-14)

    def test_rate_two(self):
        loss = dg.gamma_nll_loss(dg.constant([0.0]), dg.constant([math.log(2.0)]),
                                 np.array([1.0]))
        np.testing.assert_allclose(float(loss.data), 2.0 - math.log(2.0), rtol=1e-14)

    def test_shape_logit_gradient_is_negative_euler_gamma(self):
        # analytic: alpha*(digamma(alpha) - ln lambda - ln t) = psi(1) = -gamma;
        # finite differences confirm the sign
        s = dg.parameter(np.array([0.0]), "s")
        r = dg.parameter(np.array([0.0]), "r")
        target = np.array([1.0])
        loss = dg.gamma_nll_loss(s, r, target)
        dg.backward(loss)
        np.testing.assert_allclose(s.grad[0], -EULER_MASCHERONI, atol=1e-12)

        step = 1e-6
        hi = float(dg.gamma_nll_loss(dg.constant([step]), r, target).data)
        lo = float(dg.gamma_nll_loss(dg.constant([-step]), r, target).data)
        fd = (hi - lo) / (2.0 * step)
        np.testing.assert_allclose(s.grad[0], fd, atol=1e-6)

    def test_rate_logit_gradient_matches_fd(self):
        s = dg.parameter(np.array([0.0]), "s")
        r = dg.parameter(np.array([0.0]), "r")
        target = np.array([1.0])
        dg.backward(dg.gamma_nll_loss(s, r, target))
        step = 1e-6
        hi = float(dg.gamma_nll_loss(s, dg.constant([step]), target).data)
        lo = float(dg.gamma_nll_loss(s, dg.constant([-step]), target).data)
        np.testing.assert_allclose(r.grad[0], (hi - lo) / (2.0 * step), atol=1e-6)

    def test_nonpositive_target_rejected(self):
        with pytest.raises(DomainError):
            dg.gamma_nll_loss(dg.constant([0.0]), dg.constant([0.0]),
                              np.array([0.0]))


class TestDropout:
    def test_eval_mode_identity(self):
        x = dg.constant(np.arange(12.0).reshape(3, 4))
        out = dg.dropout(x, 0.5, None, train=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_train_mode_preserves_expectation(self):
        x = dg.constant(np.ones(100_000))
        out = dg.dropout(x, 0.3, RngState(123), train=True)
        assert abs(out.data.mean() - 1.0) <= 0.01

    def test_rate_validation(self):
        with pytest.raises(DomainError):
            dg.dropout(dg.constant([1.0]), 1.0, RngState(0), train=True)


class TestAdamW:
    def test_zero_gradient_no_decay_leaves_params(self):
        p = dg.parameter(np.array([1.0, -2.0]), "p")
        opt = dg.AdamW([([p], 0.1)], weight_decay=0.0)
        p.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_single_step_bias_corrected(self):
        # m-hat = v-hat = 1 after one unit-gradient step, so delta = -lr
        p = dg.parameter(np.array([0.5]), "p")
        opt = dg.AdamW([([p], 0.1)], weight_decay=0.0)
        p.grad = np.array([1.0])
        opt.step()
        np.testing.assert_allclose(p.data[0] - 0.5, -0.1, atol=1e-7)

    def test_decay_adds_decoupled_term(self):
        theta0 = 2.0
        runs = []
        for wd in (0.0, 0.01):
            p = dg.parameter(np.array([theta0]), "p")
            opt = dg.AdamW([([p], 0.1)], weight_decay=wd)
            p.grad = np.array([1.0])
            opt.step()
            runs.append(p.data[0])
        np.testing.assert_allclose(runs[1] - runs[0], -0.1 * 0.01 * theta0,
                                   atol=1e-12)

    def test_per_group_learning_rates(self):
        a = dg.parameter(np.array([1.0]), "a")
        b = dg.parameter(np.array([1.0]), "b")
        opt = dg.AdamW([([a], 0.0001), ([b], 0.001)], weight_decay=0.0)
        a.grad = np.array([1.0])
        b.grad = np.array([1.0])
        opt.step()
        np.testing.assert_allclose((1.0 - b.data[0]) / (1.0 - a.data[0]), 10.0,
                                   rtol=1e-6)


class TestRMSprop:
    def test_zero_gradient_leaves_params(self):
        p = dg.parameter(np.array([3.0]), "p")
        opt = dg.RMSprop([p], lr=0.01)
        p.grad = np.array([0.0])
        opt.step()
        np.testing.assert_array_equal(p.data, [3.0])

    def test_single_step_magnitude(self):
        p = dg.parameter(np.array([0.0]), "p")
        opt = dg.RMSprop([p], lr=0.01, decay=0.9, eps=1e-8)
        g = 0.5
        p.grad = np.array([g])
        opt.step()
        expected = -0.01 * g / math.sqrt(0.1 * g * g + 1e-8)
        np.testing.assert_allclose(p.data[0], expected, rtol=1e-12)

    def test_converges_on_quadratic(self):
        # minimize (theta - 3)^2 / 2 by feeding the exact gradient
        p = dg.parameter(np.array([0.0]), "p")
        opt = dg.RMSprop([p], lr=0.01)
        for _ in range(2000):
            p.grad = p.data - 3.0
            opt.step()
        assert abs(p.data[0] - 3.0) < 1e-3
