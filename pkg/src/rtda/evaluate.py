"""Robustness and calibration metrics plus multi-seed aggregation.

Adversarial accuracy over an epsilon sweep (deterministic 20-step PGD in
the reporting configuration), Brier scores on clean and contrast-shifted
views, per-image RMS-contrast histograms, and seed-replication
cross-validation that trains one model per (method, seed) cell and
aggregates mean/stddev.  All CSV emission lives here so every byte of a
run's output is a pure function of (config, seeds).
"""

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import models as models_mod
from .attacks import pgd_attack
from .augment import shift_testset
from .errors import TrainingDivergence, UsageError
from .models import build_model
from .training import train_model

_BATCH = 250


@dataclass(frozen=True)
class EvalConfig:
    eps_list: tuple = (0.0,)
    attack: object = None          # AttackSpec; epsilon swept per eps_list
    views: tuple = (("clean", 1.0),)
    bins: int = 20


@dataclass
class SeedResult:
    seed: int
    clean_accuracy: float
    adv_accuracy: dict     # epsilon -> accuracy
    brier: dict            # view name -> score


@dataclass
class EvalReport:
    method: str
    per_seed: list = field(default_factory=list)
    failures: list = field(default_factory=list)    # (seed, message)
    aggregate: dict = field(default_factory=dict)   # (metric, key) -> (mean, std)


def predict_probs(model, images, batch_size=_BATCH):
    """Softmax outputs [N,K] with parameter gradients disabled."""
    chunks = []
    with models_mod.frozen(model.params):
        for start in range(0, images.shape[0], batch_size):
            logits = model.forward(images[start:start + batch_size])
            chunks.append(np.exp(ad.log_softmax(logits).data))
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.num_classes))


def clean_accuracy(model, ds):
    if len(ds) == 0:
        raise UsageError("clean_accuracy: empty dataset")
    probs = predict_probs(model, ds.images)
    return float(np.mean(np.argmax(probs, axis=1) == ds.labels))


def adversarial_accuracy(model, ds, spec):
    """Fraction of samples still classified correctly after the attack.

    Argmax ties break toward the lowest class index.
    """
    if len(ds) == 0:
        raise UsageError("adversarial_accuracy: empty dataset")
    spec.validate()
    hits = 0
    for start in range(0, len(ds), _BATCH):
        xb = ds.images[start:start + _BATCH]
        yb = ds.labels[start:start + _BATCH]
        x_adv = pgd_attack(model, xb, yb, spec)
        probs = predict_probs(model, x_adv)
        hits += int(np.sum(np.argmax(probs, axis=1) == yb))
    return hits / len(ds)


def epsilon_sweep(model, ds, base_spec, eps_list):
    """adversarial_accuracy at each epsilon, all other settings shared."""
    eps = list(eps_list)
    if not eps or eps[0] != 0.0:
        raise UsageError("epsilon_sweep: eps_list must start at 0")
    if any(b <= a for a, b in zip(eps, eps[1:])):
        raise UsageError("epsilon_sweep: eps_list must be strictly ascending")
    out = {}
    for e in eps:
        out[e] = adversarial_accuracy(model, ds, dataclasses.replace(base_spec, epsilon=e))
    return out


def brier_score(probs, labels, mode="binary"):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0] or probs.shape[0] == 0:
        raise UsageError(
            f"brier_score: need matching nonempty probs/labels, got {probs.shape} "
            f"and {labels.shape}"
        )
    k = probs.shape[1]
    if mode == "binary":
        if k != 2:
            raise UsageError(f"brier_score: binary mode needs K=2, got K={k}")
        return float(np.mean((probs[:, 1] - labels) ** 2))
    if mode == "multiclass":
        onehot = np.eye(k)[labels]
        return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))
    raise UsageError(f"brier_score: unknown mode {mode!r}")


def brier_mode(num_classes):
    return "binary" if num_classes == 2 else "multiclass"


def shifted_brier(model, ds, views):
    """Brier per named contrast view; binary formula iff the task is 2-class."""
    mode = brier_mode(ds.num_classes)
    out = {}
    for name, gamma in views:
        shifted = ds if gamma == 1.0 else shift_testset(ds, gamma)
        probs = predict_probs(model, shifted.images)
        out[name] = brier_score(probs, shifted.labels, mode)
    return out


def contrast_histogram(ds, views, bins):
    """Per-view histogram of per-image RMS contrast (pixel std) over [0, 0.5]."""
    rows = []
    for name, gamma in views:
        shifted = ds if gamma == 1.0 else shift_testset(ds, gamma)
        rms = shifted.images.std(axis=(1, 2, 3))
        counts, edges = np.histogram(rms, bins=bins, range=(0.0, 0.5))
        for i in range(bins):
            rows.append((name, float(edges[i]), float(edges[i + 1]), int(counts[i])))
    return rows


def evaluate_model(model, ds, eval_cfg):
    sweep = epsilon_sweep(model, ds, eval_cfg.attack, eval_cfg.eps_list)
    brier = shifted_brier(model, ds, eval_cfg.views)
    return sweep[0.0], sweep, brier


def _aggregate(per_seed):
    if not per_seed:
        return {}
    agg = {}

    def put(metric, key, values):
        v = np.asarray(values, dtype=np.float64)
        agg[(metric, key)] = (float(v.mean()), float(v.std()))

    put("clean_accuracy", "", [r.clean_accuracy for r in per_seed])
    for e in per_seed[0].adv_accuracy:
        put("adv_accuracy", e, [r.adv_accuracy[e] for r in per_seed])
    for view in per_seed[0].brier:
        put("brier", view, [r.brier[view] for r in per_seed])
    return agg


def cross_validate(methods, train_ds, test_ds, model_cfg, sgd_cfg, eval_cfg, seeds,
                   on_cell=None):
    """Train and evaluate one model per (method, seed); seed replication.

    A diverging cell is recorded under failures and the run continues.
    on_cell(kind, seed, model, log_rows) fires after each successful
    training (the CLI uses it to persist parameters and logs).
    """
    reports = []
    for mspec in methods:
        report = EvalReport(mspec.kind)
        for seed in seeds:
            model = build_model(dataclasses.replace(model_cfg, seed=seed))
            try:
                rows = train_model(model, train_ds, mspec, sgd_cfg, seed)
            except TrainingDivergence as exc:
                report.failures.append((seed, str(exc)))
                continue
            if on_cell is not None:
                on_cell(mspec.kind, seed, model, rows)
            clean, sweep, brier = evaluate_model(model, test_ds, eval_cfg)
            report.per_seed.append(SeedResult(seed, clean, sweep, brier))
        report.aggregate = _aggregate(report.per_seed)
        reports.append(report)
    return reports


def select_epsilon(mean_sweep, drop=0.25):
    """Smallest epsilon whose mean accuracy drops >= ``drop`` below clean.

    mean_sweep maps epsilon -> mean adversarial accuracy (epsilon 0 = clean).
    Falls back to the largest epsilon when no point drops far enough.
    """
    eps = sorted(mean_sweep)
    if not eps or eps[0] != 0.0:
        raise UsageError("select_epsilon: sweep must include epsilon 0")
    clean = mean_sweep[0.0]
    for e in eps[1:]:
        if mean_sweep[e] <= clean - drop:
            return e
    return eps[-1]


# ---------------------------------------------------------------------------
# CSV emission (the plotting contract)


def _fmt(x):
    return repr(float(x))


def write_sweep_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seed", "epsilon", "adv_accuracy"])
        for rep in sorted(reports, key=lambda r: r.method):
            for res in sorted(rep.per_seed, key=lambda r: r.seed):
                for e in sorted(res.adv_accuracy):
                    w.writerow([rep.method, res.seed, _fmt(e), _fmt(res.adv_accuracy[e])])


def write_brier_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "seed", "view", "brier"])
        for rep in sorted(reports, key=lambda r: r.method):
            for res in sorted(rep.per_seed, key=lambda r: r.seed):
                for view, score in res.brier.items():
                    w.writerow([rep.method, res.seed, view, _fmt(score)])


def write_aggregate_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "metric", "epsilon_or_view", "mean", "stddev"])
        for rep in sorted(reports, key=lambda r: r.method):
            # keys are homogeneous within one metric (floats for the sweep,
            # strings for views), so the tuple sort never compares mixed types
            for (metric, key), (mean, std) in sorted(rep.aggregate.items()):
                label = key if isinstance(key, str) else _fmt(key)
                w.writerow([rep.method, metric, label, _fmt(mean), _fmt(std)])


def write_contrast_hist_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["view", "bin_low", "bin_high", "count"])
        for view, lo, hi, count in rows:
            w.writerow([view, _fmt(lo), _fmt(hi), count])
