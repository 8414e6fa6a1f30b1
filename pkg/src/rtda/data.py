"""Dataset construction: synthetic grayscale generator, PGM ingestion,
deterministic stratified splits.

The synthetic generator is the desk-scale stand-in for real corpora: each
class draws a structured template (oriented bar / offset blob / ring),
rotates and jitters it per sample, and adds Gaussian pixel noise.  Classes
are separable by a linear probe on raw pixels, which the tests verify.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DataError


class LabeledDataset:
    """Images [N, C, H, W] in [0,1] with integer labels in [0, num_classes)."""

    def __init__(self, images, labels, name, num_classes):
        images = np.asarray(images, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if images.ndim != 4:
            raise DataError(
                f"dataset {name!r}: images must be [N,C,H,W], got shape {images.shape}"
            )
        if labels.shape != (images.shape[0],):
            raise DataError(
                f"dataset {name!r}: {images.shape[0]} images but labels shape {labels.shape}"
            )
        if num_classes < 2:
            raise DataError(f"dataset {name!r}: num_classes must be >= 2")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise DataError(f"dataset {name!r}: pixel values outside [0,1]")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise DataError(
                f"dataset {name!r}: label outside [0, {num_classes})"
            )
        self.images = images
        self.labels = labels
        self.name = name
        self.num_classes = num_classes

    def __len__(self):
        return self.images.shape[0]

    def subset(self, indices, name=None):
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.images[idx], self.labels[idx], name or self.name, self.num_classes
        )


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 2
    samples_per_class: int = 1250
    size: int = 16
    noise_sigma: float = 0.15
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("dataset.num_classes", "must be >= 2")
        if self.size < 8:
            raise ConfigError("dataset.size", "must be >= 8")
        if self.samples_per_class < 1:
            raise ConfigError("dataset.samples_per_class", "must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("dataset.noise_sigma", "must be >= 0")


_BACKGROUND = 0.15
_JITTER = 0.15          # center offset, normalized coords
_ANGLE_JITTER = np.deg2rad(15.0)


def _pattern(kind, size, angle, cy, cx):
    """Smooth class template on a [-1,1]^2 grid, shifted to (cy, cx)."""
    lin = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(lin, lin, indexing="ij")
    yy = yy - cy
    xx = xx - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u = ca * xx + sa * yy       # along the class axis
    v = -sa * xx + ca * yy      # across it
    if kind == 0:
        return np.exp(-((v / 0.18) ** 2)) * np.exp(-((u / 0.75) ** 2))
    if kind == 1:
        d2 = (u - 0.45) ** 2 + v ** 2
        return np.exp(-d2 / 0.28 ** 2)
    r = np.sqrt(xx ** 2 + yy ** 2)
    return np.exp(-(((r - 0.55) / 0.14) ** 2))


def generate_synthetic(spec):
    spec.validate()
    n = spec.num_classes * spec.samples_per_class
    images = np.empty((n, 1, spec.size, spec.size))
    labels = np.empty(n, dtype=np.int64)
    pos = 0
    for k in range(spec.num_classes):
        base_angle = k * np.pi / spec.num_classes
        for i in range(spec.samples_per_class):
            # per-sample stream keyed by (seed, class, index): generation is
            # order-independent and bit-reproducible
            r = rngmod.stream(spec.seed, rngmod.DATA, k, i)
            angle = base_angle + r.uniform(-_ANGLE_JITTER, _ANGLE_JITTER)
            cy = r.uniform(-_JITTER, _JITTER)
            cx = r.uniform(-_JITTER, _JITTER)
            amp = r.uniform(0.55, 0.85)
            img = _BACKGROUND + amp * _pattern(k % 3, spec.size, angle, cy, cx)
            if spec.noise_sigma > 0:
                img = img + r.normal(0.0, spec.noise_sigma, size=img.shape)
            images[pos, 0] = np.clip(img, 0.0, 1.0)
            labels[pos] = k
            pos += 1
    return LabeledDataset(images, labels, "synthetic", spec.num_classes)


# ---------------------------------------------------------------------------
# PGM (binary P5, maxval 255) ingestion and export


def _header_tokens(fh, count):
    toks = []
    while len(toks) < count:
        ch = fh.read(1)
        if not ch:
            raise DataError("truncated PGM header")
        if ch == b"#":
            while ch and ch != b"\n":
                ch = fh.read(1)
            continue
        if ch.isspace():
            continue
        tok = ch
        while True:
            ch = fh.read(1)
            if not ch or ch.isspace():
                break
            tok += ch
        toks.append(tok)
    return toks


def read_pgm(path):
    """Read a binary (P5) 8-bit PGM into a float [H, W] array in [0,1]."""
    with open(path, "rb") as fh:
        magic = _header_tokens(fh, 1)[0]
        if magic != b"P5":
            raise DataError(f"{path}: not a binary PGM (magic {magic!r})")
        toks = _header_tokens(fh, 3)
        try:
            w, h, maxval = (int(t) for t in toks)
        except ValueError:
            raise DataError(f"{path}: malformed PGM header {toks}") from None
        if w < 1 or h < 1:
            raise DataError(f"{path}: bad PGM dimensions {w}x{h}")
        if maxval != 255:
            raise DataError(f"{path}: unsupported PGM maxval {maxval} (want 255)")
        payload = fh.read(w * h)
        if len(payload) != w * h:
            raise DataError(f"{path}: truncated PGM payload")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(h, w)
    return arr.astype(np.float64) / 255.0


def write_pgm(path, image):
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise DataError(f"write_pgm: expected a single-channel image, got {arr.shape}")
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (q.shape[1], q.shape[0]))
        fh.write(q.tobytes())


def load_dataset(image_dir, manifest, num_classes, name=None):
    """Read a manifest of "relative_path<TAB>label" lines into a dataset."""
    images = []
    labels = []
    shape = None
    with open(manifest) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(
                    f"{manifest} line {lineno}: expected 'path<TAB>label', got {line!r}"
                )
            rel, label_text = parts
            try:
                label = int(label_text)
            except ValueError:
                raise DataError(
                    f"{manifest} line {lineno}: label {label_text!r} is not an integer"
                ) from None
            if not 0 <= label < num_classes:
                raise DataError(
                    f"{manifest} line {lineno}: label {label} outside [0, {num_classes})"
                )
            path = os.path.join(image_dir, rel)
            if not os.path.exists(path):
                raise DataError(f"{manifest} line {lineno}: missing image file {path}")
            img = read_pgm(path)
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise DataError(
                    f"{manifest} line {lineno}: image shape {img.shape} != first image {shape}"
                )
            images.append(img[None])
            labels.append(label)
    if not images:
        stack = np.zeros((0, 1, 0, 0))
    else:
        stack = np.stack(images)
    return LabeledDataset(
        stack, np.asarray(labels, dtype=np.int64), name or "files", num_classes
    )


def export_dataset(ds, out_dir, prefix="img"):
    """Write every image as PGM plus a manifest.tsv; returns the manifest path.

    Pixels are quantized to 8 bits, so a load_dataset round-trip reproduces
    values to within half a quantization step.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w") as fh:
        for i in range(len(ds)):
            fname = f"{prefix}_{i:05d}.pgm"
            write_pgm(os.path.join(out_dir, fname), ds.images[i])
            fh.write(f"{fname}\t{int(ds.labels[i])}\n")
    return manifest


def split_dataset(ds, train_fraction, seed):
    """Stratified train/test split, deterministic per seed."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError("dataset.train_fraction", "must be strictly between 0 and 1")
    train_idx = []
    test_idx = []
    for k in range(ds.num_classes):
        members = np.nonzero(ds.labels == k)[0]
        if members.size < 2:
            raise DataError(
                f"dataset {ds.name!r}: class {k} has {members.size} sample(s), need >= 2"
            )
        perm = members[rngmod.stream(seed, rngmod.SHUFFLE, k).permutation(members.size)]
        n_train = int(round(train_fraction * members.size))
        n_train = min(max(n_train, 1), members.size - 1)
        train_idx.extend(perm[:n_train])
        test_idx.extend(perm[n_train:])
    train_idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    test_idx = np.sort(np.asarray(test_idx, dtype=np.int64))
    return (
        ds.subset(train_idx, ds.name + "-train"),
        ds.subset(test_idx, ds.name + "-test"),
    )
