"""Plain neural-network numerics: dense/conv layers, hinge loss, dropout, Adam.

Layers hold their parameters and accumulate parameter gradients on
backward; activations are ordinary numpy arrays. Everything here is the
non-spiking substrate; the spiking dynamics live in `spiking`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError, ValidationError


def glorot_uniform(rng, n_out, n_in, dtype=np.float32):
    """Uniform init in +-sqrt(6/(fan_in+fan_out))."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, (n_out, n_in)).astype(dtype)


class Dense:
    """Affine layer v = x @ W.T + b with gradient accumulation."""

    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        self.n_in = n_in
        self.n_out = n_out
        if rng is None:
            self.weight = np.zeros((n_out, n_in), dtype)
        else:
            self.weight = glorot_uniform(rng, n_out, n_in, dtype)
        self.bias = np.zeros(n_out, dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def forward(self, x):
        x = np.asarray(x)
        if x.shape[-1] != self.n_in:
            raise DimensionError(
                f"dense layer expects fan-in {self.n_in}, got input shape {x.shape}"
            )
        return x @ self.weight.T + self.bias

    def backward(self, g, x):
        """Accumulate dW/db for upstream gradient g at cached input x; return dx."""
        g = np.atleast_2d(np.asarray(g))
        x2 = np.atleast_2d(np.asarray(x))
        if g.shape[-1] != self.n_out or x2.shape[-1] != self.n_in:
            raise DimensionError(
                f"dense backward shapes {g.shape} / {x2.shape} do not match "
                f"layer ({self.n_out} x {self.n_in})"
            )
        self.grad_weight += g.T @ x2
        self.grad_bias += g.sum(axis=0)
        gx = g @ self.weight
        return gx.reshape(np.shape(x))

    def zero_grad(self):
        self.grad_weight[...] = 0
        self.grad_bias[...] = 0

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}


class Conv5x5:
    """Valid (no padding) 5x5 cross-correlation with per-channel bias."""

    kind = "conv5x5"

    def __init__(self, c_in, c_out, rng=None, dtype=np.float32):
        self.c_in = c_in
        self.c_out = c_out
        fan_in = c_in * 25
        fan_out = c_out * 25
        if rng is None:
            self.weight = np.zeros((c_out, c_in, 5, 5), dtype)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weight = rng.uniform(-limit, limit, (c_out, c_in, 5, 5)).astype(dtype)
        self.bias = np.zeros(c_out, dtype)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def _check(self, x):
        x = np.asarray(x)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DimensionError(
                f"conv5x5 expects (N, {self.c_in}, H, W), got {np.shape(x)}"
            )
        if x.shape[2] < 5 or x.shape[3] < 5:
            raise DimensionError(
                f"conv5x5 needs spatial size >= 5, got {x.shape[2]}x{x.shape[3]}"
            )
        return x, squeeze

    def forward(self, x):
        x, squeeze = self._check(x)
        out = kernels.conv5x5_forward(
            np.ascontiguousarray(x), self.weight, self.bias
        )
        return out[0] if squeeze else out

    def backward(self, g, x):
        x, squeeze = self._check(x)
        g = np.asarray(g)
        if squeeze:
            g = g[None]
        g = np.ascontiguousarray(g)
        x = np.ascontiguousarray(x)
        self.grad_weight += kernels.conv5x5_backward_kernel(g, x)
        self.grad_bias += g.sum(axis=(0, 2, 3))
        dx = kernels.conv5x5_backward_input(g, self.weight)
        return dx[0] if squeeze else dx

    def zero_grad(self):
        self.grad_weight[...] = 0
        self.grad_bias[...] = 0

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.grad_weight, "bias": self.grad_bias}


class MaxPool2x2:
    """Non-overlapping 2x2 max-pool; on binary inputs this is a window OR.

    The backward pass routes the upstream gradient to exactly one argmax
    position per window, ties resolved to the lowest row-major index.
    """

    kind = "maxpool2x2"

    @staticmethod
    def _check(x):
        x = np.asarray(x)
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise DimensionError(
                f"maxpool2x2 needs even spatial dims, got {x.shape[2]}x{x.shape[3]}"
            )
        return x, squeeze

    def forward(self, x):
        x, squeeze = self._check(x)
        out, idx = kernels.maxpool2x2_forward(np.ascontiguousarray(x))
        if squeeze:
            return out[0], idx[0]
        return out, idx

    def backward(self, g, idx):
        g = np.asarray(g)
        squeeze = g.ndim == 3
        if squeeze:
            g = g[None]
            idx = idx[None]
        dx = kernels.maxpool2x2_backward(
            np.ascontiguousarray(g), np.ascontiguousarray(idx)
        )
        return dx[0] if squeeze else dx


def squared_hinge_loss(logits, targets):
    """Mean-over-samples squared hinge on +-1 targets.

    loss = (1/N) sum_n sum_c max(0, 1 - t*y)^2, grad matches elementwise.
    """
    logits = np.atleast_2d(np.asarray(logits))
    targets = np.atleast_2d(np.asarray(targets))
    if logits.shape != targets.shape:
        raise DimensionError(
            f"logits {logits.shape} and targets {targets.shape} differ"
        )
    if not np.all(np.abs(targets) == 1):
        raise ValidationError("hinge targets must be +1 or -1")
    n = logits.shape[0]
    margin = np.maximum(0.0, 1.0 - targets * logits)
    loss = float((margin * margin).sum() / n)
    grad = (-2.0 / n) * targets * margin
    return loss, grad.astype(logits.dtype)


@dataclass
class AdamState:
    """Per-parameter Adam moments; `step` counts completed updates."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    name: str = field(default="")

    @classmethod
    def for_param(cls, param, name="", **kw):
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), name=name, **kw)


def adam_step(param, grad, state, lr):
    """One Adam update with bias correction, in place on `param`."""
    if lr <= 0:
        raise ValidationError(f"adam lr must be > 0, got {lr}")
    if param.shape != grad.shape:
        raise DimensionError(
            f"adam param {param.shape} and grad {grad.shape} differ ({state.name})"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite gradient for parameter {state.name or '<unnamed>'}")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * (grad * grad)
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    param -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)
    return param


class Adam:
    """Adam over a named parameter dict, one AdamState per parameter."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.states = {
            name: AdamState.for_param(p, name=name, beta1=beta1, beta2=beta2, eps=eps)
            for name, p in self.params.items()
        }

    def step(self, grads, lr):
        for name, param in self.params.items():
            adam_step(param, grads[name], self.states[name], lr)


def dropout_apply(x, ratio, rng, training):
    """Inverted dropout: zero with probability `ratio`, scale survivors.

    Evaluation mode is the identity. Returns (output, mask) where mask is
    the scaled keep-mask actually applied (all-ones in eval), so the same
    mask can be reused on the backward pass.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float32)
    if not 0 <= ratio < 1:
        raise ValidationError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0:
        return x, np.ones_like(x)
    mask = (rng.random(x.shape, dtype=np.float32) >= ratio).astype(x.dtype)
    mask /= np.asarray(1.0 - ratio, x.dtype)
    return x * mask, mask
