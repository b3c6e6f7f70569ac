"""Discrete-time spiking neuron dynamics and their backward rules.

Two neuron models over the same affine layers:

* step-reset: the membrane potential is rebuilt from zero at every time
  step (v = W s + b), so single steps are independent presentations.
* carry-reset: the membrane potential carries across steps and is
  decremented by the threshold whenever the neuron fires.

The binary activation fires strictly above threshold. During training
the zero-almost-everywhere derivative of the binary activation is
replaced by a straight-through window gradient: 0.5 on [0, 2], 0
elsewhere (defined for threshold 1). That window is exactly the a.e.
derivative of hard_sigmoid(x) = clip(x/2, 0, 1), which is why finite
differences of a hard-sigmoid "surrogate" network are the independent
oracle for every backward rule here.
"""

from dataclasses import dataclass

import numpy as np

from .errors import StateError, ValidationError


def binary_activation(v, theta=1.0):
    """1 where v > theta (strict), else 0; same shape/dtype-family as v."""
    if theta <= 0:
        raise ValidationError(f"threshold must be > 0, got {theta}")
    v = np.asarray(v)
    dtype = v.dtype if np.issubdtype(v.dtype, np.floating) else np.float32
    return (v > theta).astype(dtype)


def ste_gradient(v):
    """Straight-through window gradient for the binary activation, theta=1.

    0.5 on 0 <= v <= 2 inclusive, 0 elsewhere.
    """
    v = np.asarray(v)
    dtype = v.dtype if np.issubdtype(v.dtype, np.floating) else np.float32
    half = np.asarray(0.5, dtype)
    zero = np.asarray(0.0, dtype)
    return np.where((v >= 0.0) & (v <= 2.0), half, zero)


def hard_sigmoid(v):
    """clip(v/2, 0, 1): the continuous relaxation whose a.e. derivative is
    ste_gradient. Used by oracle tests, never by production forward passes."""
    v = np.asarray(v)
    return np.clip(v * 0.5, 0.0, 1.0)


@dataclass
class SteConfig:
    """Training-time surrogate settings.

    reset_grad chooses how the on-fire membrane decrement is treated in
    backprop through time: "ste" pushes the window gradient through the
    spike inside the reset term, "detached" treats the reset as constant.
    """

    theta: float = 1.0
    reset_grad: str = "ste"

    def __post_init__(self):
        if self.theta <= 0:
            raise ValidationError(f"theta must be > 0, got {self.theta}")
        if self.reset_grad not in ("ste", "detached"):
            raise ValidationError(
                f"reset_grad must be 'ste' or 'detached', got {self.reset_grad!r}"
            )

    def require_unit_theta(self):
        """The window gradient is defined for theta=1 only; training enforces it."""
        if self.theta != 1.0:
            raise ValidationError(
                f"straight-through training requires theta == 1, got {self.theta}"
            )


@dataclass
class NeuronState:
    """Carry-reset membrane state: potential after the previous firing check."""

    v: np.ndarray
    theta: float = 1.0

    @classmethod
    def zeros(cls, shape, theta=1.0, dtype=np.float32):
        return cls(v=np.zeros(shape, dtype), theta=theta)


# ---------------------------------------------------------------------------
# step-reset model (independent time steps)


def dc_forward(layer, spikes_in, theta=1.0, surrogate=False):
    """Membrane from zero: v = W s + b; spike = binary_activation(v).

    Returns (spikes_out, v); v is kept for the backward pass and for
    non-firing output layers. With surrogate=True the output is
    hard_sigmoid(v) instead of the binary spike (oracle-test mode).
    """
    v = layer.forward(spikes_in)
    out = hard_sigmoid(v) if surrogate else binary_activation(v, theta)
    return out, v


def dc_backward(layer, upstream, v, spikes_in):
    """Straight-through backward for dc_forward: local grad = upstream * window."""
    g_v = np.asarray(upstream) * ste_gradient(v)
    return layer.backward(g_v, spikes_in)


# ---------------------------------------------------------------------------
# carry-reset model (membrane integrates across steps)


def ct_step(layer, spikes_in, state, surrogate=False):
    """One carry-reset step.

    v_pre = W s + b + v_prev; spike = fire(v_pre); v_post = v_pre - theta*spike.
    Returns (spikes_out, v_pre, new_state). No lower clamp on the membrane.
    """
    theta = state.theta
    v_pre = layer.forward(spikes_in) + state.v
    if surrogate:
        out = hard_sigmoid(v_pre)
    else:
        out = binary_activation(v_pre, theta)
    v_post = v_pre - theta * out
    return out, v_pre, NeuronState(v=v_post, theta=theta)


def ct_backward_step(layer, g_spike, g_vpost, v_pre, spikes_in, cfg):
    """Backward through one carry-reset step.

    g_spike is the upstream gradient w.r.t. this step's spike output,
    g_vpost the gradient w.r.t. this step's post-check membrane. Returns
    (g_spikes_in, g_vprev) and accumulates the layer's parameter grads.
    The carry path v_prev -> v_pre has factor exactly 1.
    """
    if v_pre is None:
        raise StateError("ct_backward_step needs the cached v_pre of the matching forward step")
    window = ste_gradient(v_pre)
    if cfg.reset_grad == "ste":
        reset_factor = 1.0 - cfg.theta * window
    else:
        reset_factor = np.ones_like(window)
    g_vpre = np.asarray(g_spike) * window + np.asarray(g_vpost) * reset_factor
    g_in = layer.backward(g_vpre, spikes_in)
    return g_in, g_vpre
