"""Dataset assembly: MNIST-style IDX directories, an offline desk-scale
handwritten-digit proxy, and the synthetic moving-bar task.

The proxy exists because the full 28x28 MNIST distribution may not be
present on the machine: it upscales the bundled scikit-learn 8x8 digits
to 28x28 (3x block replication, 2px border) and augments with 2px
shifts. The train/test split is made on the *base* images before
augmentation, so no shifted copy of a test digit leaks into training.
"""

import os

import numpy as np

from .encoding import DatasetSplit, ImageSample, load_image_samples, synth_moving_bar
from .errors import ValidationError

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def mnist_split(data_dir, n_validation=10_000):
    """Load an MNIST IDX directory; the last n_validation training images
    become the validation set."""
    paths = {k: os.path.join(data_dir, v) for k, v in MNIST_FILES.items()}
    for p in paths.values():
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing dataset file: {p}")
    train_all = load_image_samples(paths["train_images"], paths["train_labels"])
    test = load_image_samples(paths["test_images"], paths["test_labels"],
                              id_offset=len(train_all))
    n_train = len(train_all) - n_validation
    if n_train <= 0:
        raise ValidationError(
            f"n_validation {n_validation} leaves no training data ({len(train_all)} total)"
        )
    return DatasetSplit(
        train=train_all[:n_train],
        validation=train_all[n_train:],
        test=test,
    )


_SHIFTS = ((0, 0), (2, 0), (-2, 0), (0, 2), (0, -2))


def _upscale_28(imgs_8x8):
    """8x8 float 0..16 -> 28x28 uint8 0..255 by 3x block replication + 2px pad."""
    scaled = (imgs_8x8 * (255.0 / 16.0)).round().astype(np.uint8)
    up = np.kron(scaled, np.ones((1, 3, 3), np.uint8))
    return np.pad(up, ((0, 0), (2, 2), (2, 2)))


def digits_proxy_split(n_train=5000, n_test=1000, seed=0):
    """Desk-scale 28x28 digit classification from the offline sklearn digits."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    imgs = _upscale_28(raw.data.reshape(-1, 8, 8))
    labels = raw.target.astype(int)

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(imgs))
    imgs, labels = imgs[order], labels[order]

    n_base_test = int(np.ceil(n_test / len(_SHIFTS)))
    if n_base_test + 1 >= len(imgs):
        raise ValidationError(f"n_test {n_test} too large for {len(imgs)} base images")

    def augment(block, block_labels):
        outs, labs = [], []
        for dr, dc in _SHIFTS:
            outs.append(np.roll(np.roll(block, dr, axis=1), dc, axis=2))
            labs.append(block_labels)
        return np.concatenate(outs), np.concatenate(labs)

    test_imgs, test_labels = augment(imgs[:n_base_test], labels[:n_base_test])
    train_imgs, train_labels = augment(imgs[n_base_test:], labels[n_base_test:])
    if len(train_imgs) < n_train:
        raise ValidationError(
            f"n_train {n_train} exceeds {len(train_imgs)} available augmented images"
        )

    tr = rng.permutation(len(train_imgs))[:n_train]
    te = rng.permutation(len(test_imgs))[:n_test]
    train = [ImageSample(train_imgs[i], int(train_labels[i]), sample_id=k)
             for k, i in enumerate(tr)]
    test = [ImageSample(test_imgs[i], int(test_labels[i]), sample_id=n_train + k)
            for k, i in enumerate(te)]
    return DatasetSplit(train=train, test=test)


DIRECTION_LABELS = {"down": 0, "up": 1}


def moving_bar_dataset(n_samples, T, grid, seed, p_fg=0.9, p_bg=0.02):
    """Balanced moving-bar set: returns (sequences, labels) with labels
    per DIRECTION_LABELS. Reproducible from (seed, n_samples, T, grid)."""
    rng = np.random.default_rng([seed, n_samples, T, grid])
    n_down = n_samples // 2
    n_up = n_samples - n_down
    seqs = synth_moving_bar(n_down, T, grid, "down", rng, p_fg, p_bg)
    seqs += synth_moving_bar(n_up, T, grid, "up", rng, p_fg, p_bg, id_offset=n_down)
    labels = np.array([DIRECTION_LABELS[s.direction] for s in seqs], np.int64)
    perm = rng.permutation(n_samples)
    return [seqs[i] for i in perm], labels[perm]


def moving_bar_split(n_train, n_test, T, grid, seed, p_fg=0.9, p_bg=0.02):
    """Disjoint train/test moving-bar sets from one seed."""
    train_seqs, train_labels = moving_bar_dataset(n_train, T, grid, seed, p_fg, p_bg)
    test_seqs, test_labels = moving_bar_dataset(n_test, T, grid, seed + 1, p_fg, p_bg)
    return (train_seqs, train_labels), (test_seqs, test_labels)


def stack_frames(sequences):
    """(N, T, width) array from a list of equally shaped SpikeFrameSequences."""
    return np.stack([s.frames for s in sequences])


def images_to_matrix(samples):
    """(N, H*W) uint8 pixel matrix + (N,) labels + (N,) sample ids."""
    px = np.stack([s.pixels.reshape(-1) for s in samples])
    labels = np.array([s.label for s in samples], np.int64)
    ids = np.array([s.sample_id for s in samples], np.int64)
    return px, labels, ids
