"""Fixed-point post-training weight quantization and integer inference.

Per-layer symmetric scaling: scale = max|w| / (2^(B-1) - 1), integer
weights = round(w/scale); bias and threshold share the weight scale (no
zero-point; inputs are binary spikes, so only weights/bias/threshold
need scaling). The integer datapath mirrors the float neuron models
exactly: strict greater-than firing, threshold-decrement reset, and a
24-bit accumulator bound that raises instead of wrapping.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionError,
    FormatError,
    NumericError,
    TruncationError,
    ValidationError,
)

ACC_BITS = 24
ACC_LIMIT = 1 << (ACC_BITS - 1)  # |v| must stay below this

QUANT_MAGIC = b"SPKQ"
QUANT_VERSION = 1


@dataclass
class QuantizedLayer:
    """Integer weights/bias with a shared scale and integer threshold."""

    weights_q: np.ndarray  # int32 (n_out, n_in)
    bias_q: np.ndarray  # int32 (n_out,)
    scale: float  # weight units per integer step
    theta_q: int
    bits: int

    def __post_init__(self):
        if not 2 <= self.bits <= 8:
            raise ValidationError(f"bits must be in [2, 8], got {self.bits}")
        qmax = (1 << (self.bits - 1)) - 1
        w = np.asarray(self.weights_q)
        if w.size and (w.max() > qmax or w.min() < -(qmax + 1)):
            raise ValidationError(
                f"quantized weights exceed {self.bits}-bit range "
                f"[{-(qmax + 1)}, {qmax}]: found [{w.min()}, {w.max()}]"
            )
        if self.theta_q < 1:
            raise ValidationError(f"theta_q must be >= 1, got {self.theta_q}")

    @property
    def n_out(self):
        return self.weights_q.shape[0]

    @property
    def n_in(self):
        return self.weights_q.shape[1]


def quantize_layer(layer, bits, theta=1.0):
    """Symmetric per-layer quantization of a dense layer at B bits.

    An all-zero layer has a degenerate max|w|; scale falls back to 1.
    The integer threshold rounds at the weight scale and is clamped to
    at least 1 so the strict fire comparison stays meaningful.
    """
    if not 2 <= bits <= 8:
        raise ValidationError(f"bits must be in [2, 8], got {bits}")
    if getattr(layer, "kind", "dense") != "dense":
        raise ValidationError(f"only dense layers quantize; got kind {layer.kind!r}")
    w = np.asarray(layer.weight, np.float64)
    b = np.asarray(layer.bias, np.float64)
    qmax = (1 << (bits - 1)) - 1
    max_abs = float(np.abs(w).max()) if w.size else 0.0
    scale = max_abs / qmax if max_abs > 0 else 1.0
    weights_q = np.rint(w / scale).astype(np.int32)
    bias_q = np.rint(b / scale).astype(np.int32)
    theta_q = max(1, int(np.rint(theta / scale)))
    return QuantizedLayer(weights_q=weights_q, bias_q=bias_q, scale=scale,
                          theta_q=theta_q, bits=bits)


def dequantize_weights(qlayer):
    return qlayer.weights_q.astype(np.float64) * qlayer.scale


@dataclass
class IntNeuronState:
    """Carry-reset membrane in accumulator units."""

    v: np.ndarray  # int64

    @classmethod
    def zeros(cls, shape):
        return cls(v=np.zeros(shape, np.int64))


def _check_accumulator(v, context):
    bad = np.abs(v) >= ACC_LIMIT
    if np.any(bad):
        neuron = int(np.argwhere(bad)[0][-1])
        raise NumericError(
            f"{context}: accumulator overflow at neuron {neuron} "
            f"(|v| >= 2^{ACC_BITS - 1})"
        )


def _binary_rows(spikes, n_in, context):
    s = np.atleast_2d(np.asarray(spikes))
    if s.shape[-1] != n_in:
        raise DimensionError(f"{context}: fan-in {n_in}, got input shape {s.shape}")
    return s.astype(np.int64)


def quantized_forward_dc(spikes_in, qlayer):
    """Integer step-reset forward: accumulate active weight columns + bias,
    fire strictly above theta_q. Returns (spikes_out, v_q)."""
    s = _binary_rows(spikes_in, qlayer.n_in, "quantized dc")
    v = s @ qlayer.weights_q.T.astype(np.int64) + qlayer.bias_q
    _check_accumulator(v, "quantized dc")
    spikes = (v > qlayer.theta_q).astype(np.uint8)
    if np.ndim(spikes_in) == 1:
        return spikes[0], v[0]
    return spikes, v


def quantized_forward_ct(spikes_in, qlayer, state):
    """Integer carry-reset step; on fire the membrane drops by exactly theta_q.

    Returns (spikes_out, new_state).
    """
    s = _binary_rows(spikes_in, qlayer.n_in, "quantized ct")
    v_pre = state.v + s @ qlayer.weights_q.T.astype(np.int64) + qlayer.bias_q
    _check_accumulator(v_pre, "quantized ct")
    spikes = (v_pre > qlayer.theta_q).astype(np.uint8)
    v_post = v_pre - qlayer.theta_q * spikes.astype(np.int64)
    if np.ndim(spikes_in) == 1:
        return spikes[0], IntNeuronState(v=v_post.reshape(state.v.shape))
    return spikes, IntNeuronState(v=v_post)


@dataclass
class QuantizedModel:
    """Quantized dense stack plus the neuron-model kind it runs as."""

    layers: list
    kind: str  # "dc" | "ct"
    bits: int
    theta: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def widths(self):
        return [l.n_in for l in self.layers] + [self.layers[-1].n_out]


def quantize_model(model, bits, kind):
    """Quantize every dense layer of an MLP at the same bit width."""
    if getattr(model, "arch_kind", None) != "mlp":
        raise ValidationError("quantized inference supports dense MLP models")
    if kind not in ("dc", "ct"):
        raise ValidationError(f"kind must be 'dc' or 'ct', got {kind!r}")
    layers = [quantize_layer(l, bits, theta=model.theta) for l in model.layers]
    return QuantizedModel(layers=layers, kind=kind, bits=bits, theta=model.theta)


def quantized_predict_dc(qmodel, spikes):
    """Hidden layers fire; the output layer stays a non-firing accumulator.

    Returns (predictions, output potentials v_q).
    """
    x = np.atleast_2d(np.asarray(spikes)).astype(np.uint8)
    for qlayer in qmodel.layers[:-1]:
        x, _ = quantized_forward_dc(x, qlayer)
    _, v = quantized_forward_dc(x, qmodel.layers[-1])
    return v.argmax(axis=1), v


def quantized_run_ct(qmodel, frames):
    """All layers fire; returns output spikes (N, T, n_out)."""
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise DimensionError(f"expected (N, T, n_in) frames, got {frames.shape}")
    n, T = frames.shape[0], frames.shape[1]
    states = [IntNeuronState.zeros((n, l.n_out)) for l in qmodel.layers]
    outs = np.zeros((n, T, qmodel.n_out), np.uint8)
    for t in range(T):
        x = frames[:, t]
        for li, qlayer in enumerate(qmodel.layers):
            x, states[li] = quantized_forward_ct(x, qlayer, states[li])
        outs[:, t] = x
    return outs


def precision_sweep(model, inputs, labels, bits_list, kind, group=None):
    """Quantize at each bit width and evaluate accuracy on a fixed input set.

    kind="dc": inputs are single-step spike frames (N, n_in), labels
    argmax over output potentials. kind="ct": inputs are sequences
    (N, T, n_in), labels argmax over total spike counts within `group`
    (default: the whole output layer). Returns [(bits, accuracy)].
    """
    labels = np.asarray(labels)
    rows = []
    for bits in bits_list:
        qmodel = quantize_model(model, bits, kind)
        if kind == "dc":
            pred, _ = quantized_predict_dc(qmodel, inputs)
        else:
            counts = quantized_run_ct(qmodel, inputs).sum(axis=1)
            start, end = group if group else (0, qmodel.n_out)
            pred = counts[:, start:end].argmax(axis=1)
        rows.append((int(bits), float((pred == labels).mean())))
    return rows


# ---------------------------------------------------------------------------
# quantized model container


def save_quantized(qmodel, path, meta=None):
    header = {
        "kind": qmodel.kind,
        "bits": qmodel.bits,
        "theta": qmodel.theta,
        "layers": [
            {
                "weight_shape": list(l.weights_q.shape),
                "scale": l.scale,
                "theta_q": int(l.theta_q),
            }
            for l in qmodel.layers
        ],
        "meta": dict(meta or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(QUANT_MAGIC)
        f.write(struct.pack("<II", QUANT_VERSION, len(blob)))
        f.write(blob)
        for l in qmodel.layers:
            f.write(np.ascontiguousarray(l.weights_q, "<i4").tobytes())
            f.write(np.ascontiguousarray(l.bias_q, "<i4").tobytes())


def load_quantized(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != QUANT_MAGIC:
        raise FormatError(f"{path}: not a quantized model file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != QUANT_VERSION:
        raise FormatError(f"{path}: version {version}, expected {QUANT_VERSION}")
    if len(raw) < 12 + hlen:
        raise TruncationError(f"{path}: truncated header")
    header = json.loads(raw[12:12 + hlen])
    offset = 12 + hlen
    layers = []
    for rec in header["layers"]:
        shape = tuple(rec["weight_shape"])
        n_out = shape[0]
        w_bytes = int(np.prod(shape)) * 4
        chunk = raw[offset:offset + w_bytes]
        if len(chunk) != w_bytes:
            raise TruncationError(f"{path}: truncated weight payload")
        weights_q = np.frombuffer(chunk, "<i4").reshape(shape).copy()
        offset += w_bytes
        chunk = raw[offset:offset + n_out * 4]
        if len(chunk) != n_out * 4:
            raise TruncationError(f"{path}: truncated bias payload")
        bias_q = np.frombuffer(chunk, "<i4").copy()
        offset += n_out * 4
        layers.append(
            QuantizedLayer(weights_q=weights_q, bias_q=bias_q,
                           scale=float(rec["scale"]), theta_q=int(rec["theta_q"]),
                           bits=int(header["bits"]))
        )
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return QuantizedModel(layers=layers, kind=header["kind"], bits=int(header["bits"]),
                          theta=float(header["theta"]), meta=header.get("meta", {}))
