"""Projected gradient descent attacks under L2 / Linf budgets.

The attack maximizes a loss (cross-entropy by default) over a norm ball
around the input, interleaving gradient ascent steps with projection onto
the epsilon-ball and clamping of pixels to [0,1].  Model parameters are
frozen for the duration, so the attack's tapes never touch parameter
gradients; callers treat the returned batch as a constant.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import models as models_mod
from .autodiff import Tensor
from .errors import ConfigError, NumericError, UsageError

L2 = "l2"
LINF = "linf"
_TINY = 1e-12


@dataclass(frozen=True)
class AttackSpec:
    norm: str = L2
    epsilon: float = 0.0
    steps: int = 7
    step_size: float = None   # None -> 2.5 * epsilon / steps
    random_start: bool = False

    def validate(self):
        if self.norm not in (L2, LINF):
            raise ConfigError("attack.norm", f"unknown norm {self.norm!r}")
        if self.epsilon < 0:
            raise ConfigError("attack.epsilon", "must be >= 0")
        if self.steps < 0:
            raise ConfigError("attack.steps", "must be >= 0")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigError("attack.step_size", "must be > 0 (or null for auto)")

    def resolved_step_size(self):
        if self.step_size is not None:
            return self.step_size
        if self.steps < 1:
            return 0.0
        return 2.5 * self.epsilon / self.steps


def project_ball(delta, norm, epsilon):
    """Project per-image perturbations onto the epsilon-ball; idempotent."""
    delta = np.asarray(delta, dtype=np.float64)
    if norm == LINF:
        return np.clip(delta, -epsilon, epsilon)
    if norm == L2:
        axes = tuple(range(1, delta.ndim))
        norms = np.sqrt(np.sum(delta * delta, axis=axes, keepdims=True))
        scale = np.where(norms > epsilon, epsilon / np.maximum(norms, _TINY), 1.0)
        return delta * scale
    raise ConfigError("attack.norm", f"unknown norm {norm!r}")


def _random_start(rng, shape, norm, epsilon):
    if norm == LINF:
        return rng.uniform(-epsilon, epsilon, size=shape)
    # uniform in the L2 ball: random direction scaled by eps * u^(1/d)
    g = rng.standard_normal(size=shape)
    axes = tuple(range(1, len(shape)))
    d = int(np.prod(shape[1:]))
    norms = np.sqrt(np.sum(g * g, axis=axes, keepdims=True))
    radii = epsilon * rng.uniform(size=(shape[0],) + (1,) * (len(shape) - 1)) ** (1.0 / d)
    return g / np.maximum(norms, _TINY) * radii


def pgd_attack(model, x, y, spec, rng=None, loss_fn=None):
    """Adversarial batch x + delta* for images x [B,C,H,W] and labels y.

    loss_fn(logits, labels) -> scalar Tensor; defaults to cross-entropy,
    which is the only loss the perturbation ever maximizes here.
    Returns a plain array; no parameter gradients are produced.
    """
    spec.validate()
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    y = np.asarray(y)
    if spec.epsilon == 0.0:
        return x
    if loss_fn is None:
        loss_fn = ad.cross_entropy
    if spec.random_start:
        if rng is None:
            raise UsageError("pgd_attack: random_start requires an rng")
        delta = _random_start(rng, x.shape, spec.norm, spec.epsilon)
        delta = project_ball(delta, spec.norm, spec.epsilon)
        delta = np.clip(x + delta, 0.0, 1.0) - x
    else:
        delta = np.zeros_like(x)
    step = spec.resolved_step_size()
    with models_mod.frozen(model.params):
        for t in range(spec.steps):
            leaf = Tensor(x + delta, requires_grad=True)
            loss = loss_fn(model.forward(leaf), y)
            loss.backward()
            g = leaf.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"pgd_attack: non-finite gradient at step {t}")
            if spec.norm == LINF:
                direction = np.sign(g)
            else:
                axes = tuple(range(1, g.ndim))
                gn = np.sqrt(np.sum(g * g, axis=axes, keepdims=True))
                direction = g / np.maximum(gn, _TINY)
            delta = delta + step * direction
            delta = project_ball(delta, spec.norm, spec.epsilon)
            # pixel clamp after projection; clamping only shrinks coordinates,
            # so the ball constraint survives it
            delta = np.clip(x + delta, 0.0, 1.0) - x
    return x + delta
