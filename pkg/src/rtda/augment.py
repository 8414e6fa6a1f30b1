"""Contrast-shift operator and AugMix-style stochastic augmentation.

Contrast shift scales pixel deviations about a pivot (per-image mean by
default) and clamps to [0,1]; it is both a training-time view and the
distribution-shift mechanism for evaluation.  The AugMix sampler mixes
several random chains of simple geometric/quantization ops via Dirichlet
weights, then blends with the original image by a Beta draw.

The chain op set deliberately excludes contrast-like ops so the shift used
for evaluation is never part of the augmentation policy being trained on.
"""

from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .data import LabeledDataset
from .errors import ConfigError


@dataclass(frozen=True)
class ContrastSpec:
    gamma: float = 1.8
    pivot: str = "mean"   # "mean" (per-image) or "fixed" (0.5)

    def validate(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ConfigError("contrast.gamma", "must be finite and >= 0")
        if self.pivot not in ("mean", "fixed"):
            raise ConfigError("contrast.pivot", f"unknown pivot {self.pivot!r}")


GAMMA_HIGH = 1.8
GAMMA_LOW = 0.4


def contrast_shift(x, spec):
    """clamp(pivot + gamma*(x - pivot), 0, 1) for [C,H,W] or [B,C,H,W] input."""
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if spec.pivot == "fixed":
        pivot = 0.5
    elif x.ndim == 4:
        pivot = x.mean(axis=(1, 2, 3), keepdims=True)
    else:
        pivot = x.mean()
    return np.clip(pivot + spec.gamma * (x - pivot), 0.0, 1.0)


def shift_testset(ds, gamma):
    """Contrast-shift every image; labels and the input dataset untouched."""
    spec = ContrastSpec(gamma=gamma)
    return LabeledDataset(
        contrast_shift(ds.images, spec),
        ds.labels.copy(),
        f"{ds.name}-gamma{gamma:g}",
        ds.num_classes,
    )


# ---------------------------------------------------------------------------
# primitive augmentation ops (nearest-neighbor, border filled with 0)


def _warp(img, inv):
    # inverse mapping about the image center; inv rows give source (y, x)
    # as affine functions of centered output coords
    c, h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    sy = inv[0][0] * yy + inv[0][1] * xx + inv[0][2] + cy
    sx = inv[1][0] * yy + inv[1][1] * xx + inv[1][2] + cx
    syi = np.rint(sy).astype(np.int64)
    sxi = np.rint(sx).astype(np.int64)
    ok = (syi >= 0) & (syi < h) & (sxi >= 0) & (sxi < w)
    sampled = img[:, np.clip(syi, 0, h - 1), np.clip(sxi, 0, w - 1)]
    return np.where(ok[None], sampled, 0.0)


def _rotate(img, degrees):
    t = np.deg2rad(degrees)
    ca, sa = np.cos(t), np.sin(t)
    return _warp(img, [[ca, sa, 0.0], [-sa, ca, 0.0]])


def _translate_x(img, frac):
    return _warp(img, [[1.0, 0.0, 0.0], [0.0, 1.0, -frac * img.shape[2]]])


def _translate_y(img, frac):
    return _warp(img, [[1.0, 0.0, -frac * img.shape[1]], [0.0, 1.0, 0.0]])


def _shear_x(img, s):
    return _warp(img, [[1.0, 0.0, 0.0], [-s, 1.0, 0.0]])


def _shear_y(img, s):
    return _warp(img, [[1.0, -s, 0.0], [0.0, 1.0, 0.0]])


def _posterize(img, bits):
    levels = 2 ** int(round(bits))
    return np.minimum(np.floor(img * levels), levels - 1) / (levels - 1)


def _solarize(img, threshold):
    return np.where(img > threshold, 1.0 - img, img)


def _identity(img, _mag):
    return img


@dataclass(frozen=True)
class _OpDef:
    fn: object
    lo: float
    hi: float
    signed: bool = False      # draw a random sign for the magnitude
    inverted: bool = False    # severity 1 maps to lo instead of hi


OPS = {
    "identity": _OpDef(_identity, 0.0, 0.0),
    "rotate": _OpDef(_rotate, 0.0, 30.0, signed=True),
    "translate_x": _OpDef(_translate_x, 0.0, 0.25, signed=True),
    "translate_y": _OpDef(_translate_y, 0.0, 0.25, signed=True),
    "shear_x": _OpDef(_shear_x, 0.0, 0.3, signed=True),
    "shear_y": _OpDef(_shear_y, 0.0, 0.3, signed=True),
    "posterize": _OpDef(_posterize, 3.0, 7.0, inverted=True),
    "solarize": _OpDef(_solarize, 0.5, 1.0, inverted=True),
}

DEFAULT_OP_SET = (
    "rotate", "translate_x", "translate_y", "shear_x", "shear_y",
    "posterize", "solarize",
)


def apply_chain(x, ops, rng, ranges=None):
    """Apply (op_name, severity) pairs left-to-right; severity in [0,1].

    Sign draws for symmetric ops come from rng even at severity 0, so the
    stream position depends only on the chain length, not the severities.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x
    for name, severity in ops:
        if name not in OPS:
            raise ConfigError("augment.chain", f"unknown op {name!r}")
        if not 0.0 <= severity <= 1.0:
            raise ConfigError(
                "augment.chain", f"severity {severity} for {name!r} outside [0,1]"
            )
        op = OPS[name]
        lo, hi = (op.lo, op.hi) if ranges is None else ranges.get(name, (op.lo, op.hi))
        mag = hi - severity * (hi - lo) if op.inverted else lo + severity * (hi - lo)
        if op.signed:
            if rng.random() < 0.5:
                mag = -mag
        out = op.fn(out, mag)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class AugmixSpec:
    width: int = 3
    max_depth: int = 3
    dirichlet_alpha: float = 1.0
    beta_alpha: float = 1.0
    op_set: tuple = DEFAULT_OP_SET
    rng_seed: int = 0

    def validate(self):
        if self.width < 1:
            raise ConfigError("augmix.width", "must be >= 1")
        if self.max_depth < 1:
            raise ConfigError("augmix.max_depth", "must be >= 1")
        if self.dirichlet_alpha <= 0:
            raise ConfigError("augmix.dirichlet_alpha", "must be > 0")
        if self.beta_alpha <= 0:
            raise ConfigError("augmix.beta_alpha", "must be > 0")
        if not self.op_set:
            raise ConfigError("augmix.op_set", "must be nonempty")
        for name in self.op_set:
            if name not in OPS:
                raise ConfigError("augmix.op_set", f"unknown op {name!r}")


def augmix_sample(x, spec, rng=None, m_override=None):
    """One stochastic mixed view of x ([C,H,W] in [0,1]).

    Draw order: Dirichlet chain weights, then per chain (depth, then op
    indices, severities, and sign bits), then the Beta blend weight.
    m_override pins the blend weight (test seam; m_override=1 returns x
    bit-exactly).
    """
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if rng is None:
        rng = rngmod.stream(spec.rng_seed, rngmod.AUGMIX)
    w = rngmod.dirichlet(rng, spec.dirichlet_alpha, spec.width)
    xmix = np.zeros_like(x)
    for i in range(spec.width):
        depth = int(rng.integers(1, spec.max_depth + 1))
        chain = []
        for _ in range(depth):
            name = spec.op_set[int(rng.integers(len(spec.op_set)))]
            chain.append((name, float(rng.random())))
        xmix += w[i] * apply_chain(x, chain, rng)
    if m_override is None:
        m = rngmod.beta(rng, spec.beta_alpha, spec.beta_alpha)
    else:
        m = float(m_override)
    # convex blend of [0,1] images stays in [0,1]; no clamp so m=1 is exact
    return m * x + (1.0 - m) * xmix


def augmix_batch(xb, spec, seed, draw_index):
    """AugMix every image of xb [B,C,H,W] with per-image derived streams.

    draw_index separates the independent views of one batch (the
    consistency losses use two independent draws).
    """
    out = np.empty_like(xb)
    for i in range(xb.shape[0]):
        r = rngmod.stream(seed, rngmod.AUGMIX, spec.rng_seed, draw_index, i)
        out[i] = augmix_sample(xb[i], spec, r)
    return out
