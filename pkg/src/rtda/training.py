"""Epoch/batch training loop: shuffle, objective, backward, SGD step.

Data order comes from a per-epoch stream keyed by (seed, epoch) and the
per-batch objective randomness from (seed, epoch, batch), so a run is
reproducible bit-for-bit regardless of how cells are scheduled.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import models as models_mod
from . import rng as rngmod
from .errors import TrainingDivergence
from .objectives import objective_loss


@dataclass
class TrainLogRow:
    epoch: int
    batch: int
    total: float
    ce_term: float
    consistency_term: float


def train_model(model, ds, objective, sgd_cfg, seed):
    """Train in place; returns the per-batch training log rows."""
    objective.validate()
    sgd_cfg.validate()
    n = len(ds)
    rows = []
    for epoch in range(sgd_cfg.epochs):
        order = rngmod.stream(seed, rngmod.SHUFFLE, epoch).permutation(n)
        lr = models_mod.lr_at_epoch(sgd_cfg, epoch)
        for bi, start in enumerate(range(0, n, sgd_cfg.batch_size)):
            idx = order[start:start + sgd_cfg.batch_size]
            xb = ds.images[idx]
            yb = ds.labels[idx]
            rng = rngmod.stream(seed, rngmod.OBJECTIVE, epoch, bi)
            model.params.zero_grad()
            breakdown = objective_loss(objective, model, xb, yb, rng)
            total = breakdown.total.item()
            if not np.isfinite(total):
                raise TrainingDivergence(objective.kind, seed, epoch)
            breakdown.total.backward()
            models_mod.sgd_step(model.params, lr)
            rows.append(TrainLogRow(
                epoch, bi, total,
                breakdown.ce_term.item(), breakdown.consistency_term.item(),
            ))
    return rows


def train_accuracy(model, ds, batch_size=256):
    """Plain argmax accuracy on ds with parameter gradients disabled."""
    hits = 0
    with models_mod.frozen(model.params):
        for start in range(0, len(ds), batch_size):
            xb = ds.images[start:start + batch_size]
            yb = ds.labels[start:start + batch_size]
            logits = model.forward(xb).data
            hits += int(np.sum(np.argmax(logits, axis=1) == yb))
    return hits / len(ds) if len(ds) else 0.0


def write_training_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "batch", "total", "ce_term", "consistency_term"])
        for r in rows:
            w.writerow([r.epoch, r.batch, repr(r.total), repr(r.ce_term),
                        repr(r.consistency_term)])
