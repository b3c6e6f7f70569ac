"""Neuron dynamics and straight-through backward rules.

The independent oracle throughout: replace the binary activation by
hard_sigmoid (clip(x/2, 0, 1)) everywhere, finite-difference that
relaxed network, and require the production backward code, run on the
relaxed forward's caches, to match, since the window gradient is
exactly hard_sigmoid's derivative almost everywhere.
"""

import numpy as np
import pytest

from spikebp import spiking
from spikebp.models import SpikingMLP
from spikebp.nn import Dense
from spikebp.spiking import (
    NeuronState,
    SteConfig,
    binary_activation,
    hard_sigmoid,
    ste_gradient,
)
from spikebp.errors import ValidationError

from conftest import central_difference, relative_error


def scalar_layer(w, b=0.0):
    layer = Dense(1, 1)
    layer.weight = np.array([[w]], np.float64)
    layer.bias = np.array([b], np.float64)
    layer.zero_grad()
    return layer


class TestBinaryActivation:
    def test_above_threshold_fires(self):
        assert binary_activation(np.array(1.5), 1.0) == 1.0

    def test_at_threshold_stays_silent(self):
        assert binary_activation(np.array(1.0), 1.0) == 0.0

    def test_negative_input(self):
        assert binary_activation(np.array(-3.2), 1.0) == 0.0

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValidationError):
            binary_activation(np.zeros(3), 0.0)


class TestSteGradient:
    def test_left_boundary_included(self):
        assert ste_gradient(np.array(0.0)) == 0.5

    def test_right_boundary_included(self):
        assert ste_gradient(np.array(2.0)) == 0.5

    def test_outside_window(self):
        assert ste_gradient(np.array(2.001)) == 0.0
        assert ste_gradient(np.array(-0.5)) == 0.0

    def test_is_hard_sigmoid_derivative_almost_everywhere(self):
        # finite differences of hard_sigmoid away from the kinks at 0 and 2
        xs = np.linspace(-3.0, 5.0, 1601)
        xs = xs[(np.abs(xs) > 1e-3) & (np.abs(xs - 2.0) > 1e-3)]
        eps = 1e-6
        fd = (hard_sigmoid(xs + eps) - hard_sigmoid(xs - eps)) / (2 * eps)
        np.testing.assert_allclose(ste_gradient(xs), fd, atol=1e-9)


class TestDcLayer:
    def test_affine_then_fire(self):
        layer = Dense(2, 1)
        layer.weight = np.array([[0.6, 0.6]])
        out, v = spiking.dc_forward(layer, np.array([1.0, 1.0]), theta=1.0)
        np.testing.assert_allclose(v, [1.2])
        np.testing.assert_array_equal(out, [1.0])

    def test_zero_input_zero_bias_silent(self):
        layer = Dense(3, 2)
        out, v = spiking.dc_forward(layer, np.zeros(3))
        np.testing.assert_array_equal(v, [0.0, 0.0])
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_bias_alone_can_fire(self):
        layer = Dense(2, 1)
        layer.bias = np.array([2.0])
        out, v = spiking.dc_forward(layer, np.zeros(2), theta=1.0)
        np.testing.assert_array_equal(out, [1.0])

    def test_dead_window_kills_gradients(self, rng):
        layer = Dense(2, 2)
        layer.weight = rng.standard_normal((2, 2))
        layer.zero_grad()
        v = np.array([-1.0, 3.0])  # both outside [0, 2]
        g_in = spiking.dc_backward(layer, np.ones(2), v, np.ones(2))
        np.testing.assert_array_equal(layer.grad_weight, np.zeros((2, 2)))
        np.testing.assert_array_equal(g_in, np.zeros(2))

    def test_single_weight_gradient_value(self):
        layer = scalar_layer(1.0)
        spiking.dc_backward(layer, np.array([1.0]), np.array([1.0]), np.array([1.0]))
        assert layer.grad_weight[0, 0] == pytest.approx(0.5)  # 1 * 0.5 * 1

    def test_backward_equals_surrogate_finite_differences(self, rng):
        layer = Dense(4, 3)
        layer.weight = rng.standard_normal((3, 4))
        layer.bias = rng.standard_normal(3)
        x = rng.standard_normal(4)
        coeff = rng.standard_normal(3)

        def surrogate_loss():
            return float(hard_sigmoid(layer.forward(x)) @ coeff)

        fd_w = central_difference(surrogate_loss, layer.weight)
        fd_x = central_difference(surrogate_loss, x)
        layer.zero_grad()
        _, v = spiking.dc_forward(layer, x, surrogate=True)
        g_in = spiking.dc_backward(layer, coeff, v, x)
        assert relative_error(layer.grad_weight, fd_w) < 1e-5
        assert relative_error(g_in, fd_x) < 1e-5


class TestCtStep:
    def test_fire_and_decrement(self):
        layer = scalar_layer(0.9)
        state = NeuronState(v=np.array([0.4]))
        out, v_pre, new = spiking.ct_step(layer, np.array([1.0]), state)
        np.testing.assert_allclose(v_pre, [1.3])
        np.testing.assert_array_equal(out, [1.0])
        np.testing.assert_allclose(new.v, [0.3])

    def test_subthreshold_carries(self):
        layer = scalar_layer(0.3)
        state = NeuronState(v=np.array([0.4]))
        out, v_pre, new = spiking.ct_step(layer, np.array([1.0]), state)
        np.testing.assert_allclose(v_pre, [0.7])
        np.testing.assert_array_equal(out, [0.0])
        np.testing.assert_allclose(new.v, [0.7])

    def test_quiescent_state_unchanged(self):
        layer = scalar_layer(0.5)
        state = NeuronState(v=np.array([0.0]))
        out, _, new = spiking.ct_step(layer, np.array([0.0]), state)
        np.testing.assert_array_equal(out, [0.0])
        np.testing.assert_array_equal(new.v, [0.0])

    def test_membrane_may_go_negative(self):
        layer = scalar_layer(-2.0)
        state = NeuronState(v=np.array([0.0]))
        _, _, new = spiking.ct_step(layer, np.array([1.0]), state)
        np.testing.assert_allclose(new.v, [-2.0])  # no lower clamp

    def test_conservation_exact_over_random_steps(self, rng):
        layer = Dense(8, 8)
        layer.weight = rng.standard_normal((8, 8)).astype(np.float32)
        state = NeuronState(v=np.zeros(8, np.float32))
        for _ in range(200):
            x = (rng.random(8) < 0.3).astype(np.float32)
            out, v_pre, state = spiking.ct_step(layer, x, state)
            # bitwise equality, not approx
            assert np.array_equal(state.v, v_pre - 1.0 * out)

    def test_zeroed_state_reproduces_dc(self, rng):
        layer = Dense(6, 5)
        layer.weight = rng.standard_normal((5, 6))
        layer.bias = rng.standard_normal(5)
        for _ in range(50):
            x = (rng.random(6) < 0.5).astype(float)
            dc_out, dc_v = spiking.dc_forward(layer, x)
            ct_out, ct_vpre, _ = spiking.ct_step(
                layer, x, NeuronState(v=np.zeros(5))
            )
            np.testing.assert_array_equal(dc_out, ct_out)
            np.testing.assert_array_equal(dc_v, ct_vpre)


class TestCtBackward:
    def test_detached_carry_factor_is_one(self):
        layer = scalar_layer(1.0)
        cfg = SteConfig(reset_grad="detached")
        _, g_vprev = spiking.ct_backward_step(
            layer, np.array([[0.0]]), np.array([[1.0]]), np.array([[1.0]]),
            np.array([[1.0]]), cfg,
        )
        assert g_vprev[0, 0] == pytest.approx(1.0)

    def test_ste_reset_factor_at_unit_potential(self):
        layer = scalar_layer(1.0)
        cfg = SteConfig(reset_grad="ste")
        _, g_vprev = spiking.ct_backward_step(
            layer, np.array([[0.0]]), np.array([[1.0]]), np.array([[1.0]]),
            np.array([[1.0]]), cfg,
        )
        assert g_vprev[0, 0] == pytest.approx(0.5)  # 1 - theta * 0.5

    def test_missing_cache_raises(self):
        layer = scalar_layer(1.0)
        with pytest.raises(spiking.StateError):
            spiking.ct_backward_step(layer, np.zeros((1, 1)), np.zeros((1, 1)),
                                     None, np.ones((1, 1)), SteConfig())

    def test_two_step_unroll_matches_surrogate_finite_differences(self, rng):
        model = SpikingMLP((2, 2), rng=rng, dtype=np.float64)
        model.layers[0].weight[...] = rng.standard_normal((2, 2))
        model.layers[0].bias[...] = rng.standard_normal(2) * 0.5
        frames = rng.random((1, 2, 2))
        coeff = rng.standard_normal(2)

        def surrogate_loss():
            counts, _ = model.run_ct_train(frames, surrogate=True)
            return float(counts[0] @ coeff)

        fd_w = central_difference(surrogate_loss, model.layers[0].weight, eps=1e-6)
        fd_b = central_difference(surrogate_loss, model.layers[0].bias, eps=1e-6)
        model.zero_grad()
        counts, caches = model.run_ct_train(frames, surrogate=True)
        model.backprop_ct(np.tile(coeff, (1, 1)), caches, SteConfig(reset_grad="ste"))
        assert relative_error(model.layers[0].grad_weight, fd_w) < 1e-4
        assert relative_error(model.layers[0].grad_bias, fd_b) < 1e-4


class TestModelLevelProperties:
    def test_spike_counts_bounded_by_steps(self, rng):
        model = SpikingMLP((10, 8, 4), rng=rng)
        frames = (rng.random((3, 7, 10)) < 0.4).astype(np.float32)
        spikes = model.run_ct(frames)
        counts = spikes.sum(axis=1)
        assert counts.min() >= 0
        assert counts.max() <= 7

    def test_dc_firing_monotone_in_active_weight(self, rng):
        layer = Dense(6, 4)
        layer.weight = rng.standard_normal((4, 6))
        x = (rng.random(6) < 0.6).astype(float)
        out, _ = spiking.dc_forward(layer, x)
        fired = np.flatnonzero(out)
        active = np.flatnonzero(x)
        if fired.size == 0 or active.size == 0:
            pytest.skip("degenerate draw")
        for k in fired:
            for i in active:
                bumped = Dense(6, 4)
                bumped.weight = layer.weight.copy()
                bumped.bias = layer.bias.copy()
                bumped.weight[k, i] += abs(rng.standard_normal()) + 0.1
                out2, _ = spiking.dc_forward(bumped, x)
                assert out2[k] == 1.0

    def test_ct_with_forced_zero_state_equals_dc_model(self, rng):
        model = SpikingMLP((5, 4, 3), rng=rng)
        for _ in range(25):
            x = (rng.random(5) < 0.5).astype(np.float32)
            dc_out, _ = model.run_dc(x, output="spikes")
            xt = x
            for layer in model.layers:
                out, _, _ = spiking.ct_step(
                    layer, xt, NeuronState.zeros(layer.n_out)
                )
                xt = out
            np.testing.assert_array_equal(dc_out, xt)
