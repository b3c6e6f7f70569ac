"""Layer numerics against hand-derived values and finite-difference oracles."""

import numpy as np
import pytest

from spikebp import nn
from spikebp.errors import DimensionError, NumericError, ValidationError

from conftest import central_difference, relative_error


def make_dense(n_in, n_out, rng):
    layer = nn.Dense(n_in, n_out)
    layer.weight = rng.standard_normal((n_out, n_in))
    layer.bias = rng.standard_normal(n_out)
    layer.grad_weight = np.zeros_like(layer.weight)
    layer.grad_bias = np.zeros_like(layer.bias)
    return layer


class TestDense:
    def test_identity_weights(self):
        layer = nn.Dense(2, 2)
        layer.weight = np.eye(2)
        np.testing.assert_array_equal(layer.forward(np.array([3.0, 5.0])), [3.0, 5.0])

    def test_affine_sum(self):
        layer = nn.Dense(2, 1)
        layer.weight = np.array([[0.6, 0.6]])
        out = layer.forward(np.array([1.0, 1.0]))
        np.testing.assert_allclose(out, [1.2])

    def test_shape_mismatch_names_both_shapes(self):
        layer = nn.Dense(3, 2)
        with pytest.raises(DimensionError, match=r"3.*\(4,\)"):
            layer.forward(np.zeros(4))

    def test_backward_matches_finite_differences(self, rng):
        layer = make_dense(3, 4, rng)
        x = rng.standard_normal(3)
        g = rng.standard_normal(4)

        def loss():
            return float(layer.forward(x) @ g)

        fd_w = central_difference(loss, layer.weight)
        fd_x = central_difference(loss, x)
        layer.zero_grad()
        gx = layer.backward(g, x)
        assert relative_error(layer.grad_weight, fd_w) < 1e-5
        assert relative_error(layer.grad_bias, g) < 1e-9
        assert relative_error(gx, fd_x) < 1e-5

    def test_backward_accumulates(self, rng):
        layer = make_dense(3, 2, rng)
        x = rng.standard_normal((5, 3))
        g = rng.standard_normal((5, 2))
        layer.backward(g, x)
        first = layer.grad_weight.copy()
        layer.backward(g, x)
        np.testing.assert_allclose(layer.grad_weight, 2 * first)


class TestConv5x5:
    def test_zero_input_gives_bias(self, rng):
        layer = nn.Conv5x5(1, 3, rng=rng)
        out = layer.forward(np.zeros((1, 6, 7)))
        expected = np.broadcast_to(layer.bias[:, None, None], (3, 2, 3))
        np.testing.assert_allclose(out, expected, atol=1e-7)

    def test_all_ones_single_kernel(self):
        layer = nn.Conv5x5(1, 1)
        layer.weight = np.ones((1, 1, 5, 5))
        out = layer.forward(np.ones((1, 5, 5)))
        np.testing.assert_allclose(out, [[[25.0]]])

    def test_too_small_input(self, rng):
        layer = nn.Conv5x5(1, 1, rng=rng)
        with pytest.raises(DimensionError, match="spatial"):
            layer.forward(np.zeros((1, 4, 6)))

    def test_gradients_match_finite_differences(self, rng):
        layer = nn.Conv5x5(1, 2)
        layer.weight = rng.standard_normal((2, 1, 5, 5))
        layer.bias = rng.standard_normal(2)
        layer.zero_grad()
        x = rng.standard_normal((1, 1, 8, 8))
        g = rng.standard_normal((1, 2, 4, 4))

        def loss():
            return float((layer.forward(x) * g).sum())

        fd_k = central_difference(loss, layer.weight)
        fd_x = central_difference(loss, x)
        gx = layer.backward(g, x)
        assert relative_error(layer.grad_weight, fd_k) < 1e-4
        assert relative_error(gx, fd_x) < 1e-4
        np.testing.assert_allclose(layer.grad_bias, g.sum(axis=(0, 2, 3)))


class TestMaxPool:
    def test_single_maximum_routes_gradient(self):
        pool = nn.MaxPool2x2()
        x = np.array([[[1.0, 0.0], [0.0, 0.0]]])
        out, idx = pool.forward(x)
        np.testing.assert_array_equal(out, [[[1.0]]])
        dx = pool.backward(np.array([[[2.5]]]), idx)
        np.testing.assert_array_equal(dx, [[[2.5, 0.0], [0.0, 0.0]]])

    def test_all_zero_window(self):
        pool = nn.MaxPool2x2()
        out, _ = pool.forward(np.zeros((1, 2, 2)))
        np.testing.assert_array_equal(out, [[[0.0]]])

    def test_tie_break_lowest_row_major(self):
        pool = nn.MaxPool2x2()
        x = np.array([[[0.2, 0.9], [0.9, 0.1]]])
        out, idx = pool.forward(x)
        np.testing.assert_allclose(out, [[[0.9]]])
        dx = pool.backward(np.array([[[1.0]]]), idx)
        # position (0,1) wins over (1,0)
        np.testing.assert_array_equal(dx, [[[0.0, 1.0], [0.0, 0.0]]])

    def test_odd_dims_rejected(self):
        with pytest.raises(DimensionError, match="even"):
            nn.MaxPool2x2().forward(np.zeros((1, 3, 4)))

    def test_binary_inputs_equal_window_or(self, rng):
        pool = nn.MaxPool2x2()
        for _ in range(20):
            x = (rng.random((2, 3, 6, 6)) < 0.4).astype(float)
            out, _ = pool.forward(x)
            windows = x.reshape(2, 3, 3, 2, 3, 2)
            expected = windows.any(axis=(3, 5)).astype(float)
            np.testing.assert_array_equal(out, expected)

    def test_backward_matches_finite_differences(self, rng):
        pool = nn.MaxPool2x2()
        x = rng.standard_normal((1, 1, 4, 4))
        g = rng.standard_normal((1, 1, 2, 2))

        def loss():
            out, _ = pool.forward(x)
            return float((out * g).sum())

        fd_x = central_difference(loss, x)
        _, idx = pool.forward(x)
        dx = pool.backward(g, idx)
        assert relative_error(dx, fd_x) < 1e-4


class TestSquaredHinge:
    def test_margin_satisfied(self):
        loss, grad = nn.squared_hinge_loss(np.array([[2.0]]), np.array([[1.0]]))
        assert loss == 0.0
        np.testing.assert_array_equal(grad, [[0.0]])

    def test_zero_logit(self):
        loss, _ = nn.squared_hinge_loss(np.array([[0.0]]), np.array([[1.0]]))
        assert loss == pytest.approx(1.0)

    def test_wrong_side_margin(self):
        loss, grad = nn.squared_hinge_loss(np.array([[1.0]]), np.array([[-1.0]]))
        assert loss == pytest.approx(4.0)
        assert grad[0, 0] == pytest.approx(4.0)  # +4 before 1/N with N=1

    def test_rejects_non_pm1_targets(self):
        with pytest.raises(ValidationError, match=r"\+1 or -1"):
            nn.squared_hinge_loss(np.zeros((1, 2)), np.array([[1.0, 0.0]]))

    def test_nonnegative_and_zero_iff_margins_met(self, rng):
        for _ in range(50):
            logits = rng.standard_normal((4, 3)) * 2
            targets = np.where(rng.random((4, 3)) < 0.5, 1.0, -1.0)
            loss, _ = nn.squared_hinge_loss(logits, targets)
            assert loss >= 0.0
            assert (loss == 0.0) == bool(np.all(targets * logits >= 1))

    def test_grad_matches_finite_differences(self, rng):
        logits = rng.standard_normal((4, 3))
        targets = np.where(rng.random((4, 3)) < 0.5, 1.0, -1.0)

        def loss():
            return nn.squared_hinge_loss(logits, targets)[0]

        fd = central_difference(loss, logits)
        _, grad = nn.squared_hinge_loss(logits, targets)
        assert relative_error(grad, fd) < 1e-6


class TestAdam:
    def test_zero_gradient_is_identity_for_all_steps(self):
        param = np.array([1.0, -2.0])
        state = nn.AdamState.for_param(param)
        for _ in range(10):
            nn.adam_step(param, np.zeros(2), state, lr=0.1)
        np.testing.assert_array_equal(param, [1.0, -2.0])

    def test_first_step_closed_form(self):
        # bias correction makes m_hat = v_hat = g on step 1, so the update
        # magnitude is lr (up to eps)
        param = np.array([0.0])
        state = nn.AdamState.for_param(param)
        nn.adam_step(param, np.array([1.0]), state, lr=1e-3)
        assert abs(param[0] + 1e-3) < 1e-9

    def test_two_steps_decrease_convex_quadratic(self):
        param = np.array([3.0])
        state = nn.AdamState.for_param(param)

        def value():
            return float(param[0] ** 2)

        before = value()
        for _ in range(2):
            nn.adam_step(param, 2 * param.copy(), state, lr=0.05)
        assert value() < before

    def test_non_finite_gradient_names_parameter(self):
        param = np.zeros(2)
        state = nn.AdamState.for_param(param, name="layer0.weight")
        with pytest.raises(NumericError, match="layer0.weight"):
            nn.adam_step(param, np.array([np.nan, 0.0]), state, lr=1e-3)

    def test_step_counter_increments(self):
        param = np.zeros(1)
        state = nn.AdamState.for_param(param)
        for i in range(1, 4):
            nn.adam_step(param, np.ones(1), state, lr=1e-3)
            assert state.step == i


class TestDropout:
    def test_zero_ratio_identity(self, rng):
        x = rng.standard_normal(10)
        out, mask = nn.dropout_apply(x, 0.0, rng, training=True)
        np.testing.assert_array_equal(out, x)
        np.testing.assert_array_equal(mask, np.ones_like(x))

    def test_eval_mode_identity(self, rng):
        x = rng.standard_normal(10)
        out, _ = nn.dropout_apply(x, 0.7, rng, training=False)
        np.testing.assert_array_equal(out, x)

    def test_ratio_one_rejected(self, rng):
        with pytest.raises(ValidationError, match="ratio"):
            nn.dropout_apply(np.ones(3), 1.0, rng, training=True)

    def test_survivor_fraction_and_mean(self, rng):
        x = np.ones(100_000)
        out, _ = nn.dropout_apply(x, 0.2, rng, training=True)
        survivors = (out != 0).mean()
        assert abs(survivors - 0.8) < 0.01
        assert abs(out.mean() - 1.0) < 0.02  # inverted scaling preserves mean
