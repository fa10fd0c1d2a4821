"""Dataset ingestion and synthesis: IDX / CIFAR-10 binary parsing, synthetic
subspace data, class membership matrices, and label corruption."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigurationError, ContractError, FormatError,
                     LengthError, RangeError)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_LEN = 3073  # 1 label byte + 32*32*3 pixel bytes


@dataclass
class ImageBatch:
    """N images with pixels in [0,1] plus integer class labels."""

    pixels: np.ndarray  # [N, L, W, C]
    labels: np.ndarray  # [N]
    num_classes: int

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.pixels.ndim != 4:
            raise ContractError(f"pixels must be [N,L,W,C], got {self.pixels.shape}")
        if self.pixels.shape[0] != self.labels.shape[0]:
            raise ContractError("pixel/label counts differ")
        if self.pixels.size and (self.pixels.min() < 0 or self.pixels.max() > 1):
            raise ContractError("pixels must lie in [0,1]")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise RangeError("label outside [0, num_classes)")

    @property
    def n(self):
        return self.pixels.shape[0]

    @property
    def pixels_per_image(self):
        return int(np.prod(self.pixels.shape[1:]))

    def flat(self):
        """Pixels flattened to [N, B]."""
        return self.pixels.reshape(self.n, -1)

    def subset(self, idx):
        return ImageBatch(self.pixels[idx], self.labels[idx], self.num_classes)


@dataclass
class MembershipMatrix:
    """Per-class diagonal indicator matrices stored as index sets."""

    index_sets: list  # one integer index array per class
    n: int

    @property
    def num_classes(self):
        return len(self.index_sets)

    def counts(self):
        return np.array([len(s) for s in self.index_sets])

    def dense(self, j):
        d = np.zeros((self.n, self.n))
        d[self.index_sets[j], self.index_sets[j]] = 1.0
        return d


@dataclass
class CorruptionConfig:
    lcr: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lcr <= 1.0:
            raise ConfigurationError(f"lcr must be in [0,1], got {self.lcr}")


def parse_idx(stream: bytes):
    """Parse a big-endian IDX byte stream.

    Returns an [N,L,W,1] float array in [0,1] for image streams, or an int
    label vector for label streams.
    """
    if len(stream) < 8:
        raise LengthError(8, len(stream), "IDX header truncated")
    magic = struct.unpack(">I", stream[:4])[0]
    if magic == IDX_IMAGES_MAGIC:
        if len(stream) < 16:
            raise LengthError(16, len(stream), "IDX image header truncated")
        n, rows, cols = struct.unpack(">III", stream[4:16])
        expected = 16 + n * rows * cols
        if len(stream) != expected:
            raise LengthError(expected, len(stream))
        pix = np.frombuffer(stream, dtype=np.uint8, offset=16)
        return pix.reshape(n, rows, cols, 1).astype(np.float64) / 255.0
    if magic == IDX_LABELS_MAGIC:
        n = struct.unpack(">I", stream[4:8])[0]
        expected = 8 + n
        if len(stream) != expected:
            raise LengthError(expected, len(stream))
        return np.frombuffer(stream, dtype=np.uint8, offset=8).astype(np.int64)
    raise FormatError(f"unexpected IDX magic 0x{magic:08x}")


def serialize_idx_images(pixels: np.ndarray) -> bytes:
    """Inverse of parse_idx for image streams (bit-exact round trip)."""
    n, rows, cols = pixels.shape[0], pixels.shape[1], pixels.shape[2]
    header = struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols)
    body = np.rint(pixels.reshape(n, rows, cols) * 255.0).astype(np.uint8)
    return header + body.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    header = struct.pack(">II", IDX_LABELS_MAGIC, len(labels))
    return header + np.asarray(labels, dtype=np.uint8).tobytes()


def load_idx_pair(image_stream: bytes, label_stream: bytes,
                  num_classes=10) -> ImageBatch:
    pixels = parse_idx(image_stream)
    labels = parse_idx(label_stream)
    if pixels.ndim != 4:
        raise FormatError("image stream parsed as labels")
    if labels.ndim != 1:
        raise FormatError("label stream parsed as images")
    if pixels.shape[0] != labels.shape[0]:
        raise LengthError(pixels.shape[0], labels.shape[0],
                          "image/label counts differ")
    return ImageBatch(pixels, labels, num_classes)


def parse_cifar10(stream: bytes) -> ImageBatch:
    """Parse CIFAR-10 binary records (label byte + channel-planar pixels)."""
    if len(stream) % CIFAR_RECORD_LEN != 0:
        expected = (len(stream) // CIFAR_RECORD_LEN + 1) * CIFAR_RECORD_LEN
        raise LengthError(expected, len(stream),
                          f"stream length not a multiple of {CIFAR_RECORD_LEN}")
    n = len(stream) // CIFAR_RECORD_LEN
    raw = np.frombuffer(stream, dtype=np.uint8).reshape(n, CIFAR_RECORD_LEN)
    labels = raw[:, 0].astype(np.int64)
    # planar RGB -> [N,32,32,3]
    pixels = raw[:, 1:].reshape(n, 3, 32, 32).transpose(0, 2, 3, 1)
    return ImageBatch(pixels.astype(np.float64) / 255.0, labels, 10)


def make_synthetic_subspace(num_classes, per_class, ambient_dim, subspace_dim,
                            noise_level, seed):
    """Samples drawn from mutually orthogonal class subspaces plus noise,
    rescaled into [0,1] and shaped like a 1-D "image" batch."""
    if subspace_dim > ambient_dim:
        raise ConfigurationError("subspace dim exceeds ambient dim")
    if num_classes * subspace_dim > ambient_dim:
        raise ConfigurationError(
            f"{num_classes} orthogonal {subspace_dim}-dim subspaces do not fit "
            f"in {ambient_dim} dimensions")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((ambient_dim, ambient_dim)))
    samples, labels = [], []
    for j in range(num_classes):
        basis = q[:, j * subspace_dim:(j + 1) * subspace_dim]
        coeff = rng.standard_normal((per_class, subspace_dim))
        pts = coeff @ basis.T
        pts += noise_level * rng.standard_normal(pts.shape)
        samples.append(pts)
        labels.extend([j] * per_class)
    raw = np.concatenate(samples)
    lo, hi = raw.min(), raw.max()
    scaled = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    pixels = scaled.reshape(len(labels), ambient_dim, 1, 1)
    return ImageBatch(pixels, np.array(labels), num_classes), raw


def build_membership(labels, num_classes) -> MembershipMatrix:
    labels = np.asarray(labels)
    if labels.size and labels.max() >= num_classes:
        raise RangeError(f"label {labels.max()} >= {num_classes}")
    if labels.size and labels.min() < 0:
        raise RangeError("negative label")
    sets = [np.flatnonzero(labels == j) for j in range(num_classes)]
    return MembershipMatrix(sets, len(labels))


def corrupt_labels(labels, cfg: CorruptionConfig, num_classes):
    """Replace floor(lcr*N) uniformly chosen labels with a uniformly chosen
    *different* class. Deterministic under cfg.seed."""
    labels = np.asarray(labels, dtype=np.int64)
    if cfg.lcr > 0 and num_classes < 2:
        raise ConfigurationError("cannot corrupt labels with a single class")
    n_flip = int(np.floor(cfg.lcr * len(labels)))
    out = labels.copy()
    if n_flip == 0:
        return out
    rng = np.random.default_rng(cfg.seed)
    victims = rng.choice(len(labels), size=n_flip, replace=False)
    offsets = rng.integers(1, num_classes, size=n_flip)
    out[victims] = (labels[victims] + offsets) % num_classes
    return out


# -- desk-scale dataset presets ----------------------------------------------

def pad_to_32(pixels):
    """Zero-pad 28x28 images to 32x32 (2 pixels per side)."""
    return np.pad(pixels, ((0, 0), (2, 2), (2, 2), (0, 0)))


def downsample_avgpool(pixels, factor=4):
    """Average-pool square images by an integer factor."""
    n, h, w, c = pixels.shape
    if h % factor or w % factor:
        raise ConfigurationError(f"size {h}x{w} not divisible by {factor}")
    return pixels.reshape(n, h // factor, factor, w // factor, factor, c) \
                 .mean(axis=(2, 4))


_DIGIT_TEMPLATES = {
    0: ["........",
        "..####..",
        ".##..##.",
        ".##..##.",
        ".##..##.",
        ".##..##.",
        "..####..",
        "........"],
    1: ["........",
        "...##...",
        "..###...",
        "...##...",
        "...##...",
        "...##...",
        "..####..",
        "........"],
    2: ["........",
        "..####..",
        ".##..##.",
        "....##..",
        "...##...",
        "..##....",
        ".######.",
        "........"],
}


def make_digits_8x8(per_class, seed, classes=(0, 1, 2), noise=0.05):
    """Procedurally rendered 8x8 digit images: jittered, intensity-scaled,
    noisy variants of fixed stroke templates. Stand-in when no IDX files are
    on disk; deterministic under seed."""
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for j, digit in enumerate(classes):
        base = np.array([[1.0 if ch == "#" else 0.0 for ch in row]
                         for row in _DIGIT_TEMPLATES[digit]])
        for _ in range(per_class):
            img = np.roll(base, rng.integers(-1, 2), axis=0)
            img = np.roll(img, rng.integers(-1, 2), axis=1)
            img = img * rng.uniform(0.7, 1.0)
            img = img + noise * rng.standard_normal(img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(j)
    order = rng.permutation(len(labels))
    pixels = np.stack(images)[order][..., None]
    return ImageBatch(pixels, np.array(labels)[order], len(classes))


def load_mnist_3class_8x8(data_dir=None, train_n=1500, test_n=300, seed=0):
    """The desk-scale 3-class 8x8 preset.

    Loads digits 0/1/2 from IDX files under `data_dir` (train-images/labels,
    t10k-images/labels), pads to 32x32 and 4x4-average-pools to 8x8. Without a
    data directory, falls back to the procedural digit generator.
    """
    if data_dir is not None:
        import gzip
        import os

        def read(name):
            for fn in (name, name + ".gz"):
                path = os.path.join(data_dir, fn)
                if os.path.exists(path):
                    opener = gzip.open if fn.endswith(".gz") else open
                    with opener(path, "rb") as f:
                        return f.read()
            raise FormatError(f"missing dataset file {name} in {data_dir}")

        def prep(images_bytes, labels_bytes, count):
            batch = load_idx_pair(images_bytes, labels_bytes)
            keep = np.flatnonzero(batch.labels < 3)[:count]
            pix = downsample_avgpool(pad_to_32(batch.pixels[keep]), 4)
            return ImageBatch(pix, batch.labels[keep], 3)

        train = prep(read("train-images-idx3-ubyte"),
                     read("train-labels-idx1-ubyte"), train_n)
        test = prep(read("t10k-images-idx3-ubyte"),
                    read("t10k-labels-idx1-ubyte"), test_n)
        return train, test

    train = make_digits_8x8(train_n // 3, seed=seed)
    test = make_digits_8x8(test_n // 3, seed=seed + 1)
    return train, test
