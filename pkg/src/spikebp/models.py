"""Spiking network architectures and the shipped presets.

Hidden layers always fire binary spikes. For step-reset (dc) nets the
output layer is a non-firing accumulator trained on raw potentials; for
carry-reset (ct) nets every layer fires and training targets output
spike counts. `surrogate=True` swaps the binary activation for its
hard-sigmoid relaxation everywhere, which is what the finite-difference
oracle tests differentiate.
"""

from dataclasses import dataclass, field

import numpy as np

from . import nn, spiking
from .errors import DimensionError, ValidationError
from .spiking import NeuronState, SteConfig, binary_activation, hard_sigmoid, ste_gradient


@dataclass
class DcCache:
    acts: list  # input actually fed to each layer (after dropout)
    vs: list  # pre-activation membrane per layer
    masks: list  # dropout masks (None where no dropout)
    pool_idx: list = field(default_factory=list)  # conv nets only


class SpikingMLP:
    """Fully connected spiking net; works as either neuron model."""

    arch_kind = "mlp"

    def __init__(self, sizes, theta=1.0, rng=None, dtype=np.float32):
        if len(sizes) < 2:
            raise ValidationError("an MLP needs at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.theta = float(theta)
        self.layers = [
            nn.Dense(self.sizes[i], self.sizes[i + 1], rng=rng, dtype=dtype)
            for i in range(len(self.sizes) - 1)
        ]

    @property
    def n_in(self):
        return self.sizes[0]

    @property
    def n_out(self):
        return self.sizes[-1]

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params().items():
                out[f"layer{i}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.grads().items():
                out[f"layer{i}.{k}"] = v
        return out

    # -- step-reset ---------------------------------------------------------

    def run_dc(self, spikes, train=False, dropout=None, rng=None,
               surrogate=False, output="potentials"):
        """Single-step forward. Returns (output, cache).

        output="potentials" leaves the final layer non-firing (the
        trained configuration); output="spikes" fires it like the
        hidden layers (spike-count evaluation / hardware parity).
        """
        x = np.asarray(spikes)
        if not np.issubdtype(x.dtype, np.floating):
            x = x.astype(np.float32)
        acts, vs, masks = [], [], []
        last = len(self.layers) - 1
        for li, layer in enumerate(self.layers):
            ratio = dropout[li] if (train and dropout is not None) else 0.0
            if ratio > 0:
                x, m = nn.dropout_apply(x, ratio, rng, training=True)
            else:
                m = None
            acts.append(x)
            masks.append(m)
            v = layer.forward(x)
            vs.append(v)
            if li < last:
                x = hard_sigmoid(v) if surrogate else binary_activation(v, self.theta)
        if output == "potentials":
            out = vs[-1]
        elif output == "spikes":
            out = hard_sigmoid(vs[-1]) if surrogate else binary_activation(vs[-1], self.theta)
        else:
            raise ValidationError(f"output must be 'potentials' or 'spikes', got {output!r}")
        return out, DcCache(acts=acts, vs=vs, masks=masks)

    def backprop_dc(self, g_out, cache):
        """Backward for run_dc(output="potentials"); accumulates layer grads,
        returns the gradient w.r.t. the input spikes."""
        g = np.asarray(g_out)
        for li in range(len(self.layers) - 1, -1, -1):
            if li < len(self.layers) - 1:
                g = g * ste_gradient(cache.vs[li])
            g = self.layers[li].backward(g, cache.acts[li])
            if cache.masks[li] is not None:
                g = g * cache.masks[li]
        return g

    # -- carry-reset --------------------------------------------------------

    def init_states(self, batch_shape=(), dtype=np.float32):
        """Zero membrane state for every layer ("initial potential is zero")."""
        shape = tuple(np.atleast_1d(batch_shape).astype(int)) if batch_shape else ()
        return [
            NeuronState.zeros(shape + (layer.n_out,), theta=self.theta, dtype=dtype)
            for layer in self.layers
        ]

    def ct_step(self, spikes_t, states, train=False, dropout=None, rng=None,
                surrogate=False):
        """Advance all layers one time step. Returns (out_spikes, new_states,
        step_cache) where step_cache holds per-layer (input, v_pre, mask)."""
        x = np.asarray(spikes_t)
        if not np.issubdtype(x.dtype, np.floating):
            x = x.astype(np.float32)
        new_states, step_cache = [], []
        for li, layer in enumerate(self.layers):
            ratio = dropout[li] if (train and dropout is not None) else 0.0
            if ratio > 0:
                x, m = nn.dropout_apply(x, ratio, rng, training=True)
            else:
                m = None
            out, v_pre, st = spiking.ct_step(layer, x, states[li], surrogate=surrogate)
            step_cache.append((x, v_pre, m))
            new_states.append(st)
            x = out
        return x, new_states, step_cache

    def run_ct(self, frames, surrogate=False):
        """Inference over a (N, T, n_in) batch; returns output spikes (N, T, n_out)."""
        frames = np.asarray(frames)
        if frames.ndim != 3 or frames.shape[2] != self.n_in:
            raise DimensionError(
                f"expected frames (N, T, {self.n_in}), got {frames.shape}"
            )
        states = self.init_states((frames.shape[0],))
        outs = []
        for t in range(frames.shape[1]):
            out, states, _ = self.ct_step(frames[:, t], states, surrogate=surrogate)
            outs.append(out)
        return np.stack(outs, axis=1)

    def run_ct_train(self, frames, dropout=None, rng=None, surrogate=False):
        """Training unroll with caches; returns (counts (N, n_out), caches)."""
        frames = np.asarray(frames)
        states = self.init_states((frames.shape[0],))
        caches = []
        counts = None
        for t in range(frames.shape[1]):
            out, states, step_cache = self.ct_step(
                frames[:, t], states, train=True, dropout=dropout, rng=rng,
                surrogate=surrogate,
            )
            caches.append(step_cache)
            counts = out.copy() if counts is None else counts + out
        return counts, caches

    def backprop_ct(self, g_counts, caches, cfg: SteConfig):
        """BPTT for run_ct_train: the count gradient enters every step's
        output spikes; membrane carry paths run backward through time."""
        g_counts = np.asarray(g_counts)
        n_layers = len(self.layers)
        g_vpost = [np.zeros_like(c[1]) for c in caches[-1]] if caches else []
        for t in range(len(caches) - 1, -1, -1):
            step_cache = caches[t]
            g_spike = g_counts
            for li in range(n_layers - 1, -1, -1):
                x_in, v_pre, mask = step_cache[li]
                g_in, g_vpre = spiking.ct_backward_step(
                    self.layers[li], g_spike, g_vpost[li], v_pre, x_in, cfg
                )
                g_vpost[li] = g_vpre  # carry to step t-1
                if mask is not None:
                    g_in = g_in * mask
                g_spike = g_in
        return g_vpost


class SpikingConvNet:
    """The 28x28-12c5-mp2-64c5-mp2-512fc-10o step-reset architecture."""

    arch_kind = "conv28"

    def __init__(self, theta=1.0, rng=None, dtype=np.float32):
        self.theta = float(theta)
        self.conv1 = nn.Conv5x5(1, 12, rng=rng, dtype=dtype)
        self.conv2 = nn.Conv5x5(12, 64, rng=rng, dtype=dtype)
        self.pool = nn.MaxPool2x2()
        self.fc = nn.Dense(64 * 4 * 4, 512, rng=rng, dtype=dtype)
        self.out = nn.Dense(512, 10, rng=rng, dtype=dtype)
        self.layers = [self.conv1, self.conv2, self.fc, self.out]

    n_in = 784
    n_out = 10

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def params(self):
        names = ["conv1", "conv2", "fc", "out"]
        return {
            f"{n}.{k}": v
            for n, layer in zip(names, self.layers)
            for k, v in layer.params().items()
        }

    def grads(self):
        names = ["conv1", "conv2", "fc", "out"]
        return {
            f"{n}.{k}": v
            for n, layer in zip(names, self.layers)
            for k, v in layer.grads().items()
        }

    def run_dc(self, spikes, train=False, dropout=None, rng=None,
               surrogate=False, output="potentials"):
        """Spike input (N, 784) -> conv/pool/fc stack -> 10 output potentials.

        The preset trains without dropout, so the dropout argument is
        accepted only as all-zero ratios.
        """
        if dropout is not None and any(r > 0 for r in dropout):
            raise ValidationError("the conv preset does not use dropout")
        x = np.asarray(spikes)
        if not np.issubdtype(x.dtype, np.floating):
            x = x.astype(np.float32)
        squeeze = x.ndim == 1
        img = x.reshape(-1, 1, 28, 28)

        def act(v):
            return hard_sigmoid(v) if surrogate else binary_activation(v, self.theta)

        acts, vs, pool_idx = [], [], []
        acts.append(img)
        v1 = self.conv1.forward(img)  # (N,12,24,24)
        vs.append(v1)
        s1 = act(v1)
        p1, i1 = self.pool.forward(s1)  # (N,12,12,12)
        pool_idx.append(i1)
        acts.append(p1)
        v2 = self.conv2.forward(p1)  # (N,64,8,8)
        vs.append(v2)
        s2 = act(v2)
        p2, i2 = self.pool.forward(s2)  # (N,64,4,4)
        pool_idx.append(i2)
        flat = p2.reshape(p2.shape[0], -1)
        acts.append(flat)
        v3 = self.fc.forward(flat)
        vs.append(v3)
        s3 = act(v3)
        acts.append(s3)
        v4 = self.out.forward(s3)
        vs.append(v4)
        if output == "potentials":
            result = v4
        elif output == "spikes":
            result = act(v4)
        else:
            raise ValidationError(f"output must be 'potentials' or 'spikes', got {output!r}")
        if squeeze:
            result = result[0]
        return result, DcCache(acts=acts, vs=vs, masks=[None] * 5, pool_idx=pool_idx)

    def backprop_dc(self, g_out, cache):
        g = np.atleast_2d(np.asarray(g_out))
        img, p1, flat, s3 = cache.acts
        v1, v2, v3, _ = cache.vs
        i1, i2 = cache.pool_idx

        g = self.out.backward(g, s3)
        g = g * ste_gradient(v3)
        g = self.fc.backward(g, flat)
        g = g.reshape(-1, 64, 4, 4)
        g = self.pool.backward(g, i2)
        g = g * ste_gradient(v2)
        g = self.conv2.backward(g, p1)
        g = self.pool.backward(g, i1)
        g = g * ste_gradient(v1)
        g = self.conv1.backward(g, img)
        return g.reshape(g.shape[0], -1)


@dataclass
class Preset:
    """Everything needed to rebuild a model and its training recipe."""

    name: str
    kind: str  # "dc" | "ct"
    arch: str  # "mlp" | "conv28"
    sizes: tuple  # mlp layer widths (ignored for conv28)
    dropout: tuple  # per-layer-input ratios, aligned with the dense stack
    epochs: int
    lr_start: float
    lr_end: float
    T_train: int
    loss_target: str  # "output_potentials" | "spike_counts"
    data: str  # "mnist" | "digits-proxy" | "nmnist" | "moving-bar"
    batch_size: int = 100
    theta: float = 1.0
    reset_grad: str = "ste"
    output_groups: tuple = ()

    def build(self, seed=0):
        rng = np.random.default_rng([seed, 0xB1A5])
        if self.arch == "mlp":
            return SpikingMLP(self.sizes, theta=self.theta, rng=rng)
        if self.arch == "conv28":
            return SpikingConvNet(theta=self.theta, rng=rng)
        raise ValidationError(f"unknown architecture {self.arch!r}")


PRESETS = {
    p.name: p
    for p in [
        # Paper-scale recipes (long runs; not exercised by CI).
        Preset("mlp-256", "dc", "mlp", (784, 256, 256, 10), (0.2, 0.1, 0.1),
               epochs=400, lr_start=1e-3, lr_end=1e-7, T_train=1,
               loss_target="output_potentials", data="mnist",
               output_groups=((0, 10),)),
        Preset("mlp-1024", "dc", "mlp", (784, 1024, 1024, 10), (0.2, 0.3, 0.3),
               epochs=400, lr_start=1e-3, lr_end=1e-7, T_train=1,
               loss_target="output_potentials", data="mnist",
               output_groups=((0, 10),)),
        Preset("conv-mnist", "dc", "conv28", (), (),
               epochs=200, lr_start=1e-3, lr_end=1e-5, T_train=1,
               loss_target="output_potentials", data="mnist",
               output_groups=((0, 10),)),
        Preset("nmnist-mlp", "ct", "mlp", (1156, 256, 256, 12), (0.2, 0.1, 0.1),
               epochs=200, lr_start=1e-3, lr_end=1e-5, T_train=16,
               loss_target="spike_counts", data="nmnist",
               output_groups=((0, 10), (10, 12))),
        # Desk-scale recipes (minutes, used by the acceptance suite).
        Preset("mlp-128", "dc", "mlp", (784, 128, 128, 10), (0.1, 0.05, 0.05),
               epochs=20, lr_start=1e-3, lr_end=1e-4, T_train=1,
               loss_target="output_potentials", data="digits-proxy",
               output_groups=((0, 10),)),
        Preset("movingbar-mlp", "ct", "mlp", (256, 64, 64, 2), (0.0, 0.0, 0.0),
               epochs=30, lr_start=1e-3, lr_end=1e-4, T_train=16,
               loss_target="spike_counts", data="moving-bar",
               output_groups=((0, 2),)),
    ]
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        ) from None
