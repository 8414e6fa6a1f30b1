"""Command-line harness: train, eval, bench, make-data.

Exit codes: 0 success, 2 configuration/data error, 3 numeric failure.
Every run is a pure function of (config, seeds): outputs are byte-stable.
"""

import argparse
import dataclasses
import os
import sys

from . import evaluate as eval_mod
from .config import load_run_config, realize_dataset
from .data import export_dataset, generate_synthetic
from .errors import ConfigError, NumericError, RtdaError
from .evaluate import (EvalReport, SeedResult, contrast_histogram, select_epsilon,
                       write_aggregate_csv, write_brier_csv,
                       write_contrast_hist_csv, write_sweep_csv)
from .models import build_model, load_params, save_params
from .training import train_model, write_training_log


def _parser():
    p = argparse.ArgumentParser(
        prog="rtda",
        description="Robust-training engine and benchmark harness "
                    "(adversarial training, augmentation consistency, PGD evaluation).",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--output", help="output directory (overrides config output_dir)")
        sp.add_argument("--seeds", help="comma-separated seed list (overrides config)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker budget; execution is sequential and "
                             "deterministic regardless")

    common(sub.add_parser("train", help="train one objective across seeds"))
    ev = sub.add_parser("eval", help="evaluate saved parameter files")
    common(ev)
    ev.add_argument("params", nargs="+", help="parameter files (.rtns with sidecar)")
    common(sub.add_parser("bench", help="full multi-objective benchmark"))
    md = sub.add_parser("make-data", help="export the synthetic dataset as PGM+manifest")
    common(md)
    return p


def _resolve_seeds(cfg, args):
    if not args.seeds:
        return cfg.seeds
    try:
        seeds = tuple(int(s) for s in args.seeds.split(","))
    except ValueError:
        raise ConfigError("seeds", f"bad --seeds value {args.seeds!r}") from None
    if not seeds or len(set(seeds)) != len(seeds) or any(s < 0 for s in seeds):
        raise ConfigError("seeds", "need unique nonnegative seeds")
    return seeds


def _resolve_output(cfg, args):
    out = args.output or cfg.output_dir
    if not out:
        raise ConfigError("output_dir", "missing (set in config or pass --output)")
    os.makedirs(out, exist_ok=True)
    return out


def _params_path(out_dir, kind, seed):
    d = os.path.join(out_dir, "params")
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, f"{kind}_seed{seed}.rtns")


def _log_path(out_dir, kind, seed):
    d = os.path.join(out_dir, "logs")
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, f"{kind}_seed{seed}.csv")


def _save_cell(out_dir, kind, seed, model, rows):
    save_params(model, _params_path(out_dir, kind, seed),
                extra={"objective": kind, "seed": seed})
    write_training_log(_log_path(out_dir, kind, seed), rows)


def _cmd_train(args):
    cfg = load_run_config(args.config)
    if cfg.objective is None:
        raise ConfigError("objective", "train needs an \"objective\" block")
    seeds = _resolve_seeds(cfg, args)
    out_dir = _resolve_output(cfg, args)
    train_ds, _ = realize_dataset(cfg.dataset)
    for seed in seeds:
        model = build_model(dataclasses.replace(cfg.model, seed=seed))
        rows = train_model(model, train_ds, cfg.objective, cfg.sgd, seed)
        _save_cell(out_dir, cfg.objective.kind, seed, model, rows)
        print(f"trained {cfg.objective.kind} seed {seed}: "
              f"{_params_path(out_dir, cfg.objective.kind, seed)}")
    return 0


def _check_model_config(loaded, expected, path):
    a = dataclasses.replace(loaded, seed=0)
    b = dataclasses.replace(expected, seed=0)
    if a != b:
        raise ConfigError(
            "model", f"parameter file {path} was built for {a}, config says {b}"
        )


def _cmd_eval(args):
    cfg = load_run_config(args.config)
    out_dir = _resolve_output(cfg, args)
    _, test_ds = realize_dataset(cfg.dataset)
    by_method = {}
    for path in args.params:
        model, meta = load_params(path)
        _check_model_config(model.config, cfg.model, path)
        kind = meta.get("objective", "model")
        seed = int(meta.get("seed", model.params.init_seed))
        clean, sweep, brier = eval_mod.evaluate_model(model, test_ds, cfg.eval_cfg)
        by_method.setdefault(kind, []).append(SeedResult(seed, clean, sweep, brier))
    reports = []
    for kind in sorted(by_method):
        per_seed = sorted(by_method[kind], key=lambda r: r.seed)
        reports.append(EvalReport(kind, per_seed, [],
                                  eval_mod._aggregate(per_seed)))
    _write_reports(out_dir, reports, test_ds, cfg)
    print(f"eval outputs written to {out_dir}")
    return 0


def _write_reports(out_dir, reports, test_ds, cfg):
    write_sweep_csv(os.path.join(out_dir, "sweep.csv"), reports)
    write_brier_csv(os.path.join(out_dir, "brier.csv"), reports)
    write_aggregate_csv(os.path.join(out_dir, "aggregate.csv"), reports)
    rows = contrast_histogram(test_ds, cfg.eval_cfg.views, cfg.eval_cfg.bins)
    write_contrast_hist_csv(os.path.join(out_dir, "contrast_hist.csv"), rows)


def _cmd_bench(args):
    cfg = load_run_config(args.config)
    if not cfg.objectives:
        raise ConfigError("objectives", "bench needs an \"objectives\" list")
    seeds = _resolve_seeds(cfg, args)
    out_dir = _resolve_output(cfg, args)
    if args.threads and args.threads > 1:
        print(f"note: --threads {args.threads} requested; cells run sequentially "
              f"in deterministic order", file=sys.stderr)
    train_ds, test_ds = realize_dataset(cfg.dataset)

    def on_cell(kind, seed, model, rows):
        _save_cell(out_dir, kind, seed, model, rows)
        print(f"trained {kind} seed {seed}")

    reports = eval_mod.cross_validate(
        list(cfg.objectives), train_ds, test_ds, cfg.model, cfg.sgd,
        cfg.eval_cfg, list(seeds), on_cell=on_cell,
    )
    _write_reports(out_dir, reports, test_ds, cfg)
    summary = _summary_markdown(cfg, seeds, train_ds, test_ds, reports)
    with open(os.path.join(out_dir, "summary.md"), "w") as fh:
        fh.write(summary)
    for line in _gate_warnings(reports, cfg):
        print(f"warning: {line}", file=sys.stderr)
    print(f"benchmark outputs written to {out_dir}")
    return 0


def _agg(report, metric, key):
    pair = report.aggregate.get((metric, key))
    return pair[0] if pair else None


def _report_eps(reports, cfg):
    """Epsilon used for headline adversarial-accuracy comparisons.

    Follows the sweep-selection procedure on the plain-training baseline
    when present; otherwise the largest configured epsilon.
    """
    eps_list = cfg.eval_cfg.eps_list
    for rep in reports:
        if rep.method == "standard" and rep.per_seed:
            sweep = {e: _agg(rep, "adv_accuracy", e) for e in eps_list}
            return select_epsilon(sweep)
    return eps_list[-1]


def _shift_view(cfg):
    for name, gamma in cfg.eval_cfg.views:
        if gamma > 1.0:
            return name
    return None


def _gate_results(reports, cfg):
    """Measured margins for the directional benchmark claims."""
    by = {r.method: r for r in reports if r.per_seed}
    eps = _report_eps(reports, cfg)
    view = _shift_view(cfg)
    out = []

    def adv(kind):
        return _agg(by[kind], "adv_accuracy", eps) if kind in by else None

    if adv("at") is not None and adv("standard") is not None:
        margin = adv("at") - adv("standard")
        out.append(("hard", margin >= 0.15,
                    f"adversarial accuracy at eps={eps:g}: at - standard = "
                    f"{margin:+.4f} (need >= +0.15)"))
    if adv("rtda") is not None and (adv("augmix") is not None
                                    or adv("dataaug") is not None):
        rivals = [v for v in (adv("augmix"), adv("dataaug")) if v is not None]
        margin = adv("rtda") - max(rivals)
        out.append(("soft", margin >= 0.10,
                    f"adversarial accuracy at eps={eps:g}: rtda - "
                    f"max(augmix, dataaug) = {margin:+.4f} (want >= +0.10)"))
    if view and all(k in by for k in ("rtda", "standard", "at")):
        r = _agg(by["rtda"], "brier", view)
        s = _agg(by["standard"], "brier", view)
        a = _agg(by["at"], "brier", view)
        ok = r < s and r < a
        out.append(("hard", ok,
                    f"Brier under {view} shift: rtda {r:.4f} vs standard {s:.4f} "
                    f"and at {a:.4f} (need rtda lowest)"))
    if "rtda" in by and "standard" in by:
        gap = _agg(by["standard"], "clean_accuracy", "") - _agg(
            by["rtda"], "clean_accuracy", "")
        out.append(("soft", gap <= 0.05,
                    f"clean accuracy: standard - rtda = {gap:+.4f} (want <= 0.05)"))
    return out


def _gate_warnings(reports, cfg):
    return [text for level, ok, text in _gate_results(reports, cfg)
            if level == "soft" and not ok]


def _summary_markdown(cfg, seeds, train_ds, test_ds, reports):
    eps = _report_eps(reports, cfg)
    view = _shift_view(cfg)
    mode = eval_mod.brier_mode(test_ds.num_classes)
    lines = []
    lines.append("# Benchmark summary\n")
    lines.append(f"- dataset: {train_ds.name}, {test_ds.num_classes} classes, "
                 f"{len(train_ds)} train / {len(test_ds)} test")
    lines.append(f"- seeds: {list(seeds)}")
    lines.append(f"- eval attack: {cfg.eval_cfg.attack.norm}, "
                 f"{cfg.eval_cfg.attack.steps} steps, deterministic; "
                 f"headline epsilon {eps:g} (sweep-selected)")
    lines.append(f"- Brier formula: {mode}\n")

    def ms(report, metric, key):
        pair = report.aggregate.get((metric, key))
        if not pair:
            return "-"
        return f"{pair[0]:.4f} ± {pair[1]:.4f}"

    header = ["method", "clean acc", f"adv acc @ {eps:g}"]
    view_names = [n for n, _ in cfg.eval_cfg.views]
    header += [f"brier {n}" for n in view_names]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for rep in sorted(reports, key=lambda r: r.method):
        row = [rep.method, ms(rep, "clean_accuracy", ""),
               ms(rep, "adv_accuracy", eps)]
        row += [ms(rep, "brier", n) for n in view_names]
        lines.append("| " + " | ".join(row) + " |")
    lines.append("")

    gates = _gate_results(reports, cfg)
    if gates:
        lines.append("## Directional checks\n")
        for level, ok, text in gates:
            mark = "pass" if ok else ("FAIL" if level == "hard" else "miss")
            lines.append(f"- [{level}] {mark}: {text}")
        lines.append("")

    failures = [(r.method, seed, msg) for r in reports for seed, msg in r.failures]
    lines.append("## Failures\n")
    if failures:
        for method, seed, msg in failures:
            lines.append(f"- {method} seed {seed}: {msg}")
    else:
        lines.append("none")
    lines.append("")
    return "\n".join(lines)


def _cmd_make_data(args):
    cfg = load_run_config(args.config)
    if cfg.dataset.kind != "synthetic":
        raise ConfigError("dataset.kind", "make-data needs a synthetic dataset")
    out_dir = _resolve_output(cfg, args)
    ds = generate_synthetic(cfg.dataset.synthetic)
    manifest = export_dataset(ds, out_dir)
    print(f"wrote {len(ds)} images and {manifest}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "make-data": _cmd_make_data,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RtdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
