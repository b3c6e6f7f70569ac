"""Training loops, evaluation sweeps, and checkpoint files.

Step-reset nets train on single-step Bernoulli presentations with the
squared hinge on raw output potentials; carry-reset nets unroll the full
sequence and apply the hinge to output spike counts affinely rescaled
from [0, T] to [-1, 1]. Both paths are deterministic given (seed,
config, data).
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import metrics
from .models import SpikingConvNet, SpikingMLP, get_preset
from .nn import Adam, squared_hinge_loss
from .spiking import SteConfig
from .errors import (
    DimensionError,
    FormatError,
    NumericError,
    TruncationError,
    ValidationError,
)

CHECKPOINT_MAGIC = b"SPKC"
CHECKPOINT_VERSION = 1


@dataclass
class LrSchedule:
    """Exponential decay hitting lr_start at epoch 0 and lr_end at the last."""

    lr_start: float
    lr_end: float
    total_epochs: int

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ValidationError(
                f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}"
            )


def lr_exponential_decay(epoch, schedule):
    if schedule.total_epochs < 2:
        return schedule.lr_start
    if not 0 <= epoch < schedule.total_epochs:
        raise ValidationError(
            f"epoch {epoch} outside schedule of {schedule.total_epochs}"
        )
    ratio = schedule.lr_end / schedule.lr_start
    return schedule.lr_start * ratio ** (epoch / (schedule.total_epochs - 1))


@dataclass
class TrainConfig:
    """Resolved hyperparameters for one run."""

    preset: str
    epochs: int
    batch_size: int = 100
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    theta: float = 1.0
    dropout: tuple = ()
    T_train: int = 1
    loss_target: str = "output_potentials"
    reset_grad: str = "ste"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr_start >= self.lr_end > 0:
            raise ValidationError("need lr_start >= lr_end > 0")
        if self.loss_target not in ("output_potentials", "spike_counts"):
            raise ValidationError(f"unknown loss_target {self.loss_target!r}")

    @classmethod
    def from_preset(cls, preset, seed=0, **overrides):
        if isinstance(preset, str):
            preset = get_preset(preset)
        values = dict(
            preset=preset.name,
            epochs=preset.epochs,
            batch_size=preset.batch_size,
            lr_start=preset.lr_start,
            lr_end=preset.lr_end,
            theta=preset.theta,
            dropout=preset.dropout,
            T_train=preset.T_train,
            loss_target=preset.loss_target,
            reset_grad=preset.reset_grad,
            seed=seed,
        )
        values.update(overrides)
        return cls(**values)

    def schedule(self):
        return LrSchedule(self.lr_start, self.lr_end, self.epochs)

    def ste_config(self):
        cfg = SteConfig(theta=self.theta, reset_grad=self.reset_grad)
        cfg.require_unit_theta()
        return cfg

    def hash(self):
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.md5(payload.encode()).hexdigest()[:12]


def class_targets(labels, n_classes, dtype=np.float32):
    """Integer labels -> +-1 one-vs-rest target rows."""
    labels = np.asarray(labels)
    t = np.full((len(labels), n_classes), -1.0, dtype)
    t[np.arange(len(labels)), labels] = 1.0
    return t


def group_targets(labels, groups, n_out, dtype=np.float32):
    """Per-group integer labels -> +-1 targets with one +1 inside each group.

    labels is (N, len(groups)); groups are (start, end) output slices.
    """
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.shape[1] != len(groups):
        raise DimensionError(
            f"labels give {labels.shape[1]} groups, expected {len(groups)}"
        )
    t = np.full((labels.shape[0], n_out), -1.0, dtype)
    for gi, (start, end) in enumerate(groups):
        col = labels[:, gi]
        if np.any(col < 0) or np.any(col >= end - start):
            raise ValidationError(f"group {gi} labels out of range [0, {end - start})")
        t[np.arange(labels.shape[0]), start + col] = 1.0
    return t


def bernoulli_batch(pixel_rows, rng):
    """Fresh binary frames for a (N, n_in) uint8 pixel matrix, p = pixel/255."""
    p = np.asarray(pixel_rows, np.float32) / 255.0
    return (rng.random(p.shape, dtype=np.float32) < p).astype(np.float32)


def _abort_diagnostics(batch_index, cache):
    stats = []
    for li, v in enumerate(cache.vs):
        stats.append(
            f"layer{li}: |v| max {float(np.abs(v).max()):.3e}, "
            f"finite {bool(np.all(np.isfinite(v)))}"
        )
    return f"batch {batch_index}: " + "; ".join(stats)


def train_epoch_dc(model, opt, pixels, labels, cfg, lr, rng):
    """One epoch over single-step Bernoulli presentations; returns mean loss."""
    if cfg.T_train != 1:
        raise ValidationError("step-reset training uses T_train == 1")
    cfg.ste_config()
    n = len(pixels)
    order = rng.permutation(n)
    targets = class_targets(labels, model.n_out)
    total = 0.0
    for bi, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        spikes = bernoulli_batch(pixels[idx], rng)
        potentials, cache = model.run_dc(
            spikes, train=True, dropout=cfg.dropout or None, rng=rng
        )
        loss, grad = squared_hinge_loss(potentials, targets[idx])
        if not np.isfinite(loss):
            raise NumericError(
                "non-finite loss; " + _abort_diagnostics(bi, cache)
            )
        total += loss * len(idx)
        model.zero_grad()
        model.backprop_dc(grad, cache)
        opt.step(model.grads(), lr)
    return total / n


def train_epoch_ct(model, opt, frames, labels, cfg, lr, rng, groups=None):
    """One BPTT epoch over spike sequences; hinge on rescaled spike counts."""
    ste_cfg = cfg.ste_config()
    if cfg.loss_target != "spike_counts":
        raise ValidationError("carry-reset training targets spike counts")
    frames = np.asarray(frames)
    n, T = frames.shape[0], frames.shape[1]
    if cfg.T_train != T:
        raise ValidationError(f"T_train {cfg.T_train} != sequence length {T}")
    labels = np.asarray(labels)
    if groups is None:
        targets = class_targets(labels, model.n_out)
    else:
        targets = group_targets(labels, groups, model.n_out)
    order = rng.permutation(n)
    total = 0.0
    count_scale = 2.0 / T
    for bi, start in enumerate(range(0, n, cfg.batch_size)):
        idx = order[start:start + cfg.batch_size]
        counts, caches = model.run_ct_train(
            frames[idx], dropout=cfg.dropout or None, rng=rng
        )
        margins = (counts - T / 2.0) * count_scale
        loss, grad_m = squared_hinge_loss(margins, targets[idx])
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss in batch {bi}")
        total += loss * len(idx)
        model.zero_grad()
        model.backprop_ct(grad_m * count_scale, caches, ste_cfg)
        opt.step(model.grads(), lr)
    return total / n


# ---------------------------------------------------------------------------
# evaluation


def evaluate_dc(model, pixels, labels, T_eval, n_trials=20, seed=0,
                sample_ids=None, accumulate="potentials"):
    """Accuracy after 1..T_eval accumulated steps, averaged over n_trials.

    Every step of every trial re-encodes each image with a fresh
    Bernoulli draw from a stream keyed by (seed, trial, sample_id), so
    the result is independent of sample order. accumulate="potentials"
    sums output potentials; "counts" counts output spikes.
    """
    if T_eval < 1:
        raise ValidationError(f"T_eval must be >= 1, got {T_eval}")
    if accumulate not in ("potentials", "counts"):
        raise ValidationError(f"unknown accumulate mode {accumulate!r}")
    pixels = np.asarray(pixels)
    labels = np.asarray(labels)
    n = len(pixels)
    if sample_ids is None:
        sample_ids = np.arange(n)
    hits = np.zeros(T_eval)
    for trial in range(n_trials):
        frames = np.empty((n, T_eval, pixels.shape[1]), np.float32)
        for i in range(n):
            r = np.random.default_rng([seed, trial, int(sample_ids[i])])
            p = pixels[i].astype(np.float32) / 255.0
            frames[i] = r.random((T_eval, p.size), dtype=np.float32) < p
        running = np.zeros((n, model.n_out), np.float32)
        for t in range(T_eval):
            out, _ = model.run_dc(
                frames[:, t],
                output="potentials" if accumulate == "potentials" else "spikes",
            )
            running += out
            hits[t] += (running.argmax(axis=1) == labels).mean()
    return hits / n_trials


def ct_cumulative_counts(model, frames, T_eval=None):
    """Cumulative output spike counts after each step: (N, T_eval, n_out)."""
    frames = np.asarray(frames)
    T = frames.shape[1] if T_eval is None else T_eval
    if T > frames.shape[1]:
        raise ValidationError(f"T_eval {T} exceeds sequence length {frames.shape[1]}")
    spikes = model.run_ct(frames[:, :T])
    return np.cumsum(spikes, axis=1)


def evaluate_ct(model, frames, group_labels, groups, T_eval=None):
    """Per-group accuracy after 1..T_eval steps from cumulative spike counts.

    Classification is argmax within each output group; ties resolve to
    the lowest index. Returns an array (len(groups), T_eval).
    """
    counts = ct_cumulative_counts(model, frames, T_eval)
    group_labels = np.asarray(group_labels)
    if group_labels.ndim == 1:
        group_labels = group_labels[:, None]
    accs = np.zeros((len(groups), counts.shape[1]))
    for gi, (start, end) in enumerate(groups):
        pred = counts[:, :, start:end].argmax(axis=2)
        accs[gi] = (pred == group_labels[:, gi:gi + 1]).mean(axis=0)
    return accs


# ---------------------------------------------------------------------------
# checkpoints


def _layer_records(model):
    names = (
        [f"layer{i}" for i in range(len(model.layers))]
        if model.arch_kind == "mlp"
        else ["conv1", "conv2", "fc", "out"]
    )
    return [
        {
            "name": name,
            "kind": layer.kind,
            "weight_shape": list(layer.weight.shape),
            "bias_shape": list(layer.bias.shape),
        }
        for name, layer in zip(names, model.layers)
    ]


def save_checkpoint(model, meta, path):
    """Binary container: magic, version, JSON header, float32 LE payload."""
    header = {
        "arch": model.arch_kind,
        "sizes": list(getattr(model, "sizes", ())),
        "theta": model.theta,
        "layers": _layer_records(model),
        "meta": dict(meta),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for layer in model.layers:
            f.write(np.ascontiguousarray(layer.weight, "<f4").tobytes())
            f.write(np.ascontiguousarray(layer.bias, "<f4").tobytes())


def load_checkpoint(path, expect_preset=None):
    """Rebuild (model, meta) from a checkpoint file."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    if len(raw) < 12 + hlen:
        raise TruncationError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[12:12 + hlen])
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: corrupt checkpoint header: {e}") from None
    meta = header.get("meta", {})
    if expect_preset is not None and meta.get("preset") != expect_preset:
        raise ValidationError(
            f"{path}: checkpoint is for preset {meta.get('preset')!r}, "
            f"expected {expect_preset!r}"
        )
    if header["arch"] == "mlp":
        model = SpikingMLP(header["sizes"], theta=header["theta"])
    elif header["arch"] == "conv28":
        model = SpikingConvNet(theta=header["theta"])
    else:
        raise FormatError(f"{path}: unknown arch {header['arch']!r}")
    offset = 12 + hlen
    for record, layer in zip(header["layers"], model.layers):
        w_shape = tuple(record["weight_shape"])
        b_shape = tuple(record["bias_shape"])
        if w_shape != layer.weight.shape or b_shape != layer.bias.shape:
            raise ValidationError(
                f"{path}: layer {record['name']} shape {w_shape} does not match "
                f"model {layer.weight.shape}"
            )
        for attr, shape in (("weight", w_shape), ("bias", b_shape)):
            nbytes = int(np.prod(shape)) * 4
            chunk = raw[offset:offset + nbytes]
            if len(chunk) != nbytes:
                raise TruncationError(f"{path}: truncated payload at {record['name']}")
            setattr(layer, attr, np.frombuffer(chunk, "<f4").reshape(shape).copy())
            offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, meta


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class FitResult:
    model: object
    history: list
    config: TrainConfig
    records: list = field(default_factory=list)


def fit(cfg, train_data, groups=None, progress=None):
    """Train a preset model from scratch; returns the model plus per-epoch
    loss history and metrics records (wall_clock stays 0 for determinism)."""
    preset = get_preset(cfg.preset)
    model = preset.build(seed=cfg.seed)
    opt = Adam(model.params())
    rng = np.random.default_rng([cfg.seed, 0x7EA1])
    schedule = cfg.schedule()
    run_id = f"{cfg.preset}-seed{cfg.seed}"
    history = []
    records = []
    for epoch in range(cfg.epochs):
        lr = lr_exponential_decay(epoch, schedule)
        if preset.kind == "dc":
            pixels, labels = train_data
            loss = train_epoch_dc(model, opt, pixels, labels, cfg, lr, rng)
        else:
            frames, labels = train_data
            loss = train_epoch_ct(model, opt, frames, labels, cfg, lr, rng,
                                  groups=groups or preset.output_groups)
        history.append(loss)
        records.append(metrics.MetricsRecord(run_id, "train", epoch, "loss", loss))
        records.append(metrics.MetricsRecord(run_id, "train", epoch, "lr", lr))
        if progress:
            progress(epoch, loss)
    return FitResult(model=model, history=history, config=cfg, records=records)
