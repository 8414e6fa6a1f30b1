"""The seven training objectives behind one dispatch.

Each objective is a cross-entropy term plus an optional lambda-weighted
consistency term over extra views of the batch (augmented, adversarial,
contrast-shifted).  View construction is separated from loss evaluation:

  build_views   draws randomness, runs the attack, applies augmentations,
                and returns plain arrays -- constants from the loss's
                point of view (the stop-gradient through delta*);
  loss_from_views  differentiable function of the parameters only.

objective_loss composes the two.  The perturbation always maximizes
cross-entropy alone, never the consistency term, and the attack pass
produces no parameter gradients.

Randomness contract: build_views draws exactly two child seeds (attack
first, then augmentation) from the supplied rng regardless of kind, so
objectives that share a kind prefix see identical perturbations from
identical rng states (e.g. the lambda=0 reductions are bit-level).
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .attacks import pgd_attack
from .augment import augmix_batch, contrast_shift
from .autodiff import Tensor
from .errors import ConfigError, ShapeError, UsageError

STANDARD = "standard"
AT = "at"
ADVL = "advl"
DATAAUG = "dataaug"
AUGMIX = "augmix"
ROBUSTAUGMIX = "robustaugmix"
RTDA = "rtda"

KINDS = (STANDARD, AT, ADVL, DATAAUG, AUGMIX, ROBUSTAUGMIX, RTDA)

_NEEDS_ATTACK = (AT, ADVL, ROBUSTAUGMIX, RTDA)
_NEEDS_AUGMIX = (AUGMIX, ROBUSTAUGMIX, RTDA)
_JSD_KINDS = (AUGMIX, ROBUSTAUGMIX, RTDA)


def default_lambda(kind):
    if kind in _JSD_KINDS:
        return 12.0
    if kind in (ADVL, DATAAUG):
        return 1.0
    return 0.0


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    lam: float = 0.0
    attack: object = None
    augmix: object = None
    contrast: tuple = None   # extra shifted views (DataAug CE / JSD appends)

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError("objective.kind", f"unknown kind {self.kind!r}")
        if self.lam < 0:
            raise ConfigError("objective.lambda", "must be >= 0")
        if self.kind in _NEEDS_ATTACK:
            if self.attack is None:
                raise ConfigError("objective.attack", f"required for kind {self.kind}")
            self.attack.validate()
        if self.kind in _NEEDS_AUGMIX:
            if self.augmix is None:
                raise ConfigError("objective.augmix", f"required for kind {self.kind}")
            self.augmix.validate()
        if self.kind == DATAAUG and not self.contrast:
            raise ConfigError("objective.contrast", "required for kind dataaug")
        for spec in self.contrast or ():
            spec.validate()


@dataclass
class LossBreakdown:
    total: Tensor
    ce_term: Tensor
    consistency_term: Tensor
    views_used: list = field(default_factory=list)


def mean_distribution(dists):
    """Elementwise arithmetic mean of >= 2 same-shape distributions."""
    if len(dists) < 2:
        raise UsageError("mean_distribution needs at least two distributions")
    ts = [d if isinstance(d, Tensor) else Tensor(d) for d in dists]
    shape = ts[0].shape
    for t in ts[1:]:
        if t.shape != shape:
            raise ShapeError(f"mean_distribution: shapes {shape} and {t.shape} differ")
    acc = ts[0]
    for t in ts[1:]:
        acc = ad.add(acc, t)
    return ad.mul(acc, Tensor(1.0 / len(ts)))


def jsd(dists):
    """Jensen-Shannon divergence of m >= 2 distributions.

    For [K] vectors: (1/m) sum_j KL(p_j || M) with M the mean distribution.
    For [B,K] batches: the batch mean of the per-sample JSD (the value the
    consistency losses use).  Differentiable through tensor inputs.
    """
    if len(dists) < 2:
        raise UsageError("jsd needs at least two distributions")
    ts = [d if isinstance(d, Tensor) else Tensor(d) for d in dists]
    for t in ts:
        ad._check_distribution(t.data, "jsd")
    mean = mean_distribution(ts)
    log_mean = ad.tlog(ad.clamp_min(mean, ad.PROB_CLAMP))
    total = None
    for t in ts:
        # raw-p multiplier: exact-zero entries contribute exactly zero
        term = ad.tsum(ad.mul(t, ad.tlog(ad.clamp_min(t, ad.PROB_CLAMP)) - log_mean))
        total = term if total is None else ad.add(total, term)
    rows = ts[0].shape[0] if ts[0].ndim == 2 else 1
    return ad.mul(total, Tensor(1.0 / (len(ts) * rows)))


def _probs(logits):
    return ad.texp(ad.log_softmax(logits))


def _contrast_tag(spec, taken):
    if spec.gamma > 1.0:
        base = "shifted_high"
    elif spec.gamma < 1.0:
        base = "shifted_low"
    else:
        base = "shifted_unit"
    tag = base
    n = 2
    while tag in taken:
        tag = f"{base}_{n}"
        n += 1
    return tag


def build_views(spec, model, x, y, rng):
    """All input views the objective needs, as plain arrays keyed by tag."""
    spec.validate()
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    attack_seed = rngmod.child_seed(rng)
    augmix_seed = rngmod.child_seed(rng)
    views = {"clean": x}
    if spec.kind in _NEEDS_ATTACK:
        arng = rngmod.stream(attack_seed, rngmod.ATTACK)
        views["adversarial"] = pgd_attack(model, x, y, spec.attack, rng=arng)
    if spec.kind == AUGMIX:
        views["augmented_1"] = augmix_batch(x, spec.augmix, augmix_seed, 1)
        views["augmented_2"] = augmix_batch(x, spec.augmix, augmix_seed, 2)
    elif spec.kind in (ROBUSTAUGMIX, RTDA):
        views["augmented_1"] = augmix_batch(x, spec.augmix, augmix_seed, 1)
    if spec.contrast and spec.kind in (DATAAUG, ROBUSTAUGMIX, RTDA):
        for cs in spec.contrast:
            views[_contrast_tag(cs, views)] = contrast_shift(x, cs)
    return views


def loss_from_views(spec, model, views, y):
    """Differentiable loss over fixed views; total = ce + lambda * consistency."""
    cache = {}

    def logits(tag):
        if tag not in cache:
            cache[tag] = model.forward(Tensor(views[tag]))
        return cache[tag]

    shifted = [t for t in views if t.startswith("shifted")]
    kind = spec.kind
    if kind == STANDARD:
        ce = ad.cross_entropy(logits("clean"), y)
        return LossBreakdown(ce, ce, Tensor(0.0), ["clean"])
    if kind == AT:
        ce = ad.cross_entropy(logits("adversarial"), y)
        return LossBreakdown(ce, ce, Tensor(0.0), ["adversarial"])
    if kind == ADVL:
        ce = ad.cross_entropy(logits("clean"), y)
        cons = ad.cross_entropy(logits("adversarial"), y)
        used = ["clean", "adversarial"]
    elif kind == DATAAUG:
        ce = ad.cross_entropy(logits("clean"), y)
        total = None
        for tag in shifted:
            term = ad.cross_entropy(logits(tag), y)
            total = term if total is None else ad.add(total, term)
        cons = ad.mul(total, Tensor(1.0 / len(shifted)))
        used = ["clean"] + shifted
    elif kind == AUGMIX:
        ce = ad.cross_entropy(logits("clean"), y)
        cons = jsd([_probs(logits("clean")), _probs(logits("augmented_1")),
                    _probs(logits("augmented_2"))])
        used = ["clean", "augmented_1", "augmented_2"]
    else:   # robustaugmix / rtda share the JSD over clean, augmented, adversarial
        jsd_tags = ["clean", "augmented_1", "adversarial"] + shifted
        cons = jsd([_probs(logits(t)) for t in jsd_tags])
        ce_tag = "adversarial" if kind == RTDA else "clean"
        ce = ad.cross_entropy(logits(ce_tag), y)
        used = list(dict.fromkeys([ce_tag] + jsd_tags))
    total = ad.add(ce, ad.mul(Tensor(spec.lam), cons))
    return LossBreakdown(total, ce, cons, used)


def objective_loss(spec, model, x, y, rng):
    """LossBreakdown for one batch; rng drives attack + augmentation draws."""
    views = build_views(spec, model, x, y, rng)
    return loss_from_views(spec, model, views, y)
