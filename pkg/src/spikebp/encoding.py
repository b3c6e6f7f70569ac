"""Dataset file formats and spike encoders.

File formats:
* IDX containers (big-endian): magic 0x00000803 + count/rows/cols for
  image files, 0x00000801 + count for label files, payload bytes row-major.
* Address-event files: 5 bytes per record. byte0=x, byte1=y, byte2 bit7 =
  polarity (1 = on), the remaining 23 bits of bytes 2..4 = timestamp in
  microseconds, big-endian bit order.

Encoders turn samples into binary spike frames: Bernoulli rate coding for
static images (fresh draw per presentation and per step) and fixed-count
temporal binning for event streams. A synthetic moving-bar generator
provides a desk-scale temporal task with the same frame layout.
"""

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, TruncationError, ValidationError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class ImageSample:
    """Grayscale image with its class label; `sample_id` is a stable identity
    used to derive order-independent encoding streams."""

    pixels: np.ndarray  # uint8 (H, W)
    label: int
    sample_id: int = 0


@dataclass
class EventRecord:
    x: int
    y: int
    polarity: int  # 1 = on, 0 = off
    t_us: int


@dataclass
class SpikeFrameSequence:
    """T binary frames over a fixed set of input neurons.

    frames is a (T, width) uint8 array; direction is the motion tag
    ("down"/"up"/"" for untagged data).
    """

    frames: np.ndarray
    sample_id: int = 0
    direction: str = ""

    @property
    def T(self):
        return self.frames.shape[0]

    @property
    def width(self):
        return self.frames.shape[1]


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# IDX containers


def load_idx(path):
    """Parse an IDX file; returns a uint8 array (N, rows, cols) or (N,)."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise TruncationError(f"{path}: too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_IMAGE_MAGIC:
        if len(raw) < 16:
            raise TruncationError(f"{path}: truncated image header")
        count, rows, cols = struct.unpack(">III", raw[4:16])
        payload = raw[16:]
        expected = count * rows * cols
        if len(payload) != expected:
            raise TruncationError(
                f"{path}: header declares {count} images of {rows}x{cols} "
                f"({expected} bytes) but payload holds {len(payload)}"
            )
        return np.frombuffer(payload, np.uint8).reshape(count, rows, cols)
    if magic == IDX_LABEL_MAGIC:
        (count,) = struct.unpack(">I", raw[4:8])
        payload = raw[8:]
        if len(payload) != count:
            raise TruncationError(
                f"{path}: header declares {count} labels, payload holds {len(payload)}"
            )
        return np.frombuffer(payload, np.uint8)
    raise FormatError(f"{path}: unknown IDX magic 0x{magic:08x}")


def save_idx(path, array):
    """Serialize a uint8 array back to IDX ((N,H,W) -> images, (N,) -> labels)."""
    array = np.ascontiguousarray(array, np.uint8)
    with open(path, "wb") as f:
        if array.ndim == 3:
            f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *array.shape))
        elif array.ndim == 1:
            f.write(struct.pack(">II", IDX_LABEL_MAGIC, array.shape[0]))
        else:
            raise ValidationError(f"cannot serialize array of ndim {array.ndim} as IDX")
        f.write(array.tobytes())


def load_image_samples(images_path, labels_path, id_offset=0):
    """Pair an IDX image file with its label file into ImageSamples."""
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 3:
        raise FormatError(f"{images_path} is not an IDX image file")
    if labels.ndim != 1:
        raise FormatError(f"{labels_path} is not an IDX label file")
    if len(images) != len(labels):
        raise FormatError(
            f"image count {len(images)} != label count {len(labels)}"
        )
    return [
        ImageSample(pixels=img, label=int(lab), sample_id=id_offset + i)
        for i, (img, lab) in enumerate(zip(images, labels))
    ]


# ---------------------------------------------------------------------------
# address-event files


def load_aer_events(path):
    """Decode 5-byte address events; see module docstring for the layout."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) % 5:
        raise FormatError(
            f"{path}: length {len(raw)} is not a multiple of the 5-byte record size"
        )
    data = np.frombuffer(raw, np.uint8).reshape(-1, 5)
    xs = data[:, 0].astype(int)
    ys = data[:, 1].astype(int)
    pol = (data[:, 2] >> 7).astype(int)
    ts = (
        ((data[:, 2].astype(np.int64) & 0x7F) << 16)
        | (data[:, 3].astype(np.int64) << 8)
        | data[:, 4].astype(np.int64)
    )
    return [
        EventRecord(x=int(x), y=int(y), polarity=int(p), t_us=int(t))
        for x, y, p, t in zip(xs, ys, pol, ts)
    ]


def save_aer_events(path, events):
    """Inverse of load_aer_events, for fixtures and round-trip checks."""
    out = bytearray()
    for ev in events:
        if not 0 <= ev.t_us < (1 << 23):
            raise ValidationError(f"timestamp {ev.t_us} exceeds the 23-bit field")
        b2 = ((ev.polarity & 1) << 7) | ((ev.t_us >> 16) & 0x7F)
        out += bytes((ev.x, ev.y, b2, (ev.t_us >> 8) & 0xFF, ev.t_us & 0xFF))
    with open(path, "wb") as f:
        f.write(bytes(out))


# ---------------------------------------------------------------------------
# spike encoders


def bernoulli_encode(pixels, rng):
    """One binary frame: each neuron fires with p = pixel/255.

    Every call is a fresh draw, so repeated presentations of the same
    image yield different spike patterns.
    """
    p = np.asarray(pixels, np.float32).reshape(-1) / 255.0
    return (rng.random(p.shape, dtype=np.float32) < p).astype(np.uint8)


def bin_events_to_frames(events, T, window_us, polarity="on", width=34):
    """Bin events into T equal half-open time bins over [0, window_us).

    Bin b covers [b*window_us/T, (b+1)*window_us/T); events at or beyond
    window_us are discarded. Neuron index is y*width + x; multiple events
    of one pixel in one bin collapse to a single spike.
    """
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if window_us <= 0:
        raise ValidationError(f"window_us must be > 0, got {window_us}")
    if polarity not in ("on", "off", "both"):
        raise ValidationError(f"polarity must be on/off/both, got {polarity!r}")
    frames = np.zeros((T, width * width), np.uint8)
    for ev in events:
        if polarity == "on" and ev.polarity != 1:
            continue
        if polarity == "off" and ev.polarity != 0:
            continue
        if not 0 <= ev.t_us < window_us:
            continue
        b = ev.t_us * T // window_us
        frames[b, ev.y * width + ev.x] = 1
    return SpikeFrameSequence(frames=frames)


_FLIP = {"down": "up", "up": "down", "": ""}


def reverse_time_augment(seq):
    """Frames in reversed order with the direction tag flipped; the input
    sequence is left untouched."""
    return replace(
        seq,
        frames=seq.frames[::-1].copy(),
        direction=_FLIP.get(seq.direction, seq.direction),
    )


def synth_moving_bar(n_samples, T, grid, direction, rng, p_fg=0.9, p_bg=0.02,
                     id_offset=0):
    """Sequences of a 1-pixel horizontal bar translating one row per step.

    The bar starts at a random row and wraps around; "down" moves to
    increasing row index, "up" to decreasing. Occupied pixels spike with
    probability p_fg, background pixels with p_bg (p_fg=1, p_bg=0 gives
    the deterministic noise-free bar).
    """
    if T > grid:
        raise ValidationError(f"T ({T}) must be <= grid ({grid})")
    if direction not in ("down", "up"):
        raise ValidationError(f"direction must be 'down' or 'up', got {direction!r}")
    step = 1 if direction == "down" else -1
    seqs = []
    for i in range(n_samples):
        start = int(rng.integers(0, grid))
        frames = (rng.random((T, grid * grid), dtype=np.float32) < p_bg).astype(np.uint8)
        for t in range(T):
            row = (start + step * t) % grid
            bar = rng.random(grid, dtype=np.float32) < p_fg
            frames[t, row * grid:(row + 1) * grid] = bar
        seqs.append(
            SpikeFrameSequence(frames=frames, sample_id=id_offset + i, direction=direction)
        )
    return seqs
