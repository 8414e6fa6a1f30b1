"""JSON run-configuration parsing with strict unknown-key rejection.

Every error carries the dotted path of the offending field; a typo in a
robustness experiment should fail loudly, not silently fall back to a
default.  Parsing is hand-rolled over plain dicts so the error paths stay
exact and the accepted schema is visible in one file.
"""

import json
from dataclasses import dataclass

from .attacks import AttackSpec
from .augment import AugmixSpec, ContrastSpec
from .data import SyntheticSpec, generate_synthetic, load_dataset, split_dataset
from .errors import ConfigError
from .evaluate import EvalConfig
from .models import ModelConfig, SgdConfig
from .objectives import KINDS, ObjectiveSpec, default_lambda

_MISSING = object()


def _obj(node, path):
    if not isinstance(node, dict):
        raise ConfigError(path, f"expected an object, got {type(node).__name__}")
    return dict(node)


def _reject_unknown(d, path):
    if d:
        key = sorted(d)[0]
        raise ConfigError(f"{path}.{key}" if path else key, "unknown key")


def _take(d, key, path, default=_MISSING):
    if key in d:
        return d.pop(key)
    if default is _MISSING:
        raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
    return default


def _int(v, path):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"expected an integer, got {v!r}")
    return v


def _float(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(path, f"expected a number, got {v!r}")
    return float(v)


def _bool(v, path):
    if not isinstance(v, bool):
        raise ConfigError(path, f"expected true/false, got {v!r}")
    return v


def _str(v, path):
    if not isinstance(v, str):
        raise ConfigError(path, f"expected a string, got {v!r}")
    return v


def _list(v, path):
    if not isinstance(v, list):
        raise ConfigError(path, f"expected a list, got {v!r}")
    return v


def parse_attack(node, path, require_epsilon=True):
    d = _obj(node, path)
    norm = _str(_take(d, "norm", path, "l2"), f"{path}.norm")
    if require_epsilon:
        epsilon = _float(_take(d, "epsilon", path), f"{path}.epsilon")
    else:
        epsilon = _float(_take(d, "epsilon", path, 0.0), f"{path}.epsilon")
    steps = _int(_take(d, "steps", path, 7), f"{path}.steps")
    raw_step = _take(d, "step_size", path, None)
    step_size = None if raw_step is None else _float(raw_step, f"{path}.step_size")
    random_start = _bool(_take(d, "random_start", path, False), f"{path}.random_start")
    _reject_unknown(d, path)
    spec = AttackSpec(norm=norm, epsilon=epsilon, steps=steps,
                      step_size=step_size, random_start=random_start)
    spec.validate()
    return spec


def parse_augmix(node, path):
    d = _obj(node, path)
    op_raw = _take(d, "op_set", path, None)
    if op_raw is None:
        op_set = AugmixSpec().op_set
    else:
        op_set = tuple(_str(o, f"{path}.op_set")
                       for o in _list(op_raw, f"{path}.op_set"))
    spec = AugmixSpec(
        width=_int(_take(d, "width", path, 3), f"{path}.width"),
        max_depth=_int(_take(d, "max_depth", path, 3), f"{path}.max_depth"),
        dirichlet_alpha=_float(_take(d, "dirichlet_alpha", path, 1.0),
                               f"{path}.dirichlet_alpha"),
        beta_alpha=_float(_take(d, "beta_alpha", path, 1.0), f"{path}.beta_alpha"),
        op_set=op_set,
        rng_seed=_int(_take(d, "rng_seed", path, 0), f"{path}.rng_seed"),
    )
    _reject_unknown(d, path)
    spec.validate()
    return spec


def parse_contrast_list(node, path):
    items = _list(node, path)
    specs = []
    for i, entry in enumerate(items):
        p = f"{path}[{i}]"
        d = _obj(entry, p)
        spec = ContrastSpec(
            gamma=_float(_take(d, "gamma", p), f"{p}.gamma"),
            pivot=_str(_take(d, "pivot", p, "mean"), f"{p}.pivot"),
        )
        _reject_unknown(d, p)
        spec.validate()
        specs.append(spec)
    return tuple(specs)


def parse_objective(node, path):
    d = _obj(node, path)
    kind = _str(_take(d, "kind", path), f"{path}.kind").lower()
    if kind not in KINDS:
        raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}")
    lam_raw = _take(d, "lambda", path, None)
    lam = default_lambda(kind) if lam_raw is None else _float(lam_raw, f"{path}.lambda")
    attack_raw = _take(d, "attack", path, None)
    attack = None if attack_raw is None else parse_attack(attack_raw, f"{path}.attack")
    augmix_raw = _take(d, "augmix", path, None)
    augmix = None if augmix_raw is None else parse_augmix(augmix_raw, f"{path}.augmix")
    contrast_raw = _take(d, "contrast", path, None)
    contrast = (None if contrast_raw is None
                else parse_contrast_list(contrast_raw, f"{path}.contrast"))
    _reject_unknown(d, path)
    spec = ObjectiveSpec(kind=kind, lam=lam, attack=attack, augmix=augmix,
                         contrast=contrast)
    spec.validate()
    return spec


def parse_model(node, path):
    d = _obj(node, path)
    widths = _list(_take(d, "stage_widths", path, [8, 16]), f"{path}.stage_widths")
    cfg = ModelConfig(
        input_channels=_int(_take(d, "input_channels", path, 1),
                            f"{path}.input_channels"),
        input_size=_int(_take(d, "input_size", path, 16), f"{path}.input_size"),
        num_classes=_int(_take(d, "num_classes", path, 2), f"{path}.num_classes"),
        stage_widths=tuple(_int(wd, f"{path}.stage_widths") for wd in widths),
        blocks_per_stage=_int(_take(d, "blocks_per_stage", path, 1),
                              f"{path}.blocks_per_stage"),
    )
    _reject_unknown(d, path)
    cfg.validate()
    return cfg


def parse_sgd(node, path):
    d = _obj(node, path)
    cfg = SgdConfig(
        learning_rate=_float(_take(d, "learning_rate", path, 0.01),
                             f"{path}.learning_rate"),
        decay_factor=_float(_take(d, "decay_factor", path, 10.0),
                            f"{path}.decay_factor"),
        decay_every_epochs=_int(_take(d, "decay_every_epochs", path, 5),
                                f"{path}.decay_every_epochs"),
        epochs=_int(_take(d, "epochs", path, 10), f"{path}.epochs"),
        batch_size=_int(_take(d, "batch_size", path, 64), f"{path}.batch_size"),
    )
    _reject_unknown(d, path)
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class DatasetConfig:
    kind: str                       # "synthetic" | "files"
    synthetic: SyntheticSpec = None
    image_dir: str = None
    manifest: str = None
    num_classes: int = 2
    train_fraction: float = 0.8
    split_seed: int = 0


def parse_dataset(node, path):
    d = _obj(node, path)
    kind = _str(_take(d, "kind", path, "synthetic"), f"{path}.kind")
    train_fraction = _float(_take(d, "train_fraction", path, 0.8),
                            f"{path}.train_fraction")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"{path}.train_fraction", "must be strictly between 0 and 1")
    split_seed = _int(_take(d, "split_seed", path, 0), f"{path}.split_seed")
    if kind == "synthetic":
        spec = SyntheticSpec(
            num_classes=_int(_take(d, "num_classes", path, 2), f"{path}.num_classes"),
            samples_per_class=_int(_take(d, "samples_per_class", path, 1250),
                                   f"{path}.samples_per_class"),
            size=_int(_take(d, "size", path, 16), f"{path}.size"),
            noise_sigma=_float(_take(d, "noise_sigma", path, 0.15),
                               f"{path}.noise_sigma"),
            seed=_int(_take(d, "seed", path, 0), f"{path}.seed"),
        )
        _reject_unknown(d, path)
        spec.validate()
        return DatasetConfig(kind="synthetic", synthetic=spec,
                             num_classes=spec.num_classes,
                             train_fraction=train_fraction, split_seed=split_seed)
    if kind == "files":
        cfg = DatasetConfig(
            kind="files",
            image_dir=_str(_take(d, "dir", path), f"{path}.dir"),
            manifest=_str(_take(d, "manifest", path), f"{path}.manifest"),
            num_classes=_int(_take(d, "num_classes", path), f"{path}.num_classes"),
            train_fraction=train_fraction, split_seed=split_seed,
        )
        _reject_unknown(d, path)
        return cfg
    raise ConfigError(f"{path}.kind", f"unknown dataset kind {kind!r}")


def parse_eval(node, path):
    d = _obj(node, path)
    eps_raw = _list(_take(d, "eps_list", path, [0.0]), f"{path}.eps_list")
    eps_list = tuple(_float(e, f"{path}.eps_list") for e in eps_raw)
    if not eps_list or eps_list[0] != 0.0:
        raise ConfigError(f"{path}.eps_list", "must start at 0")
    if any(b <= a for a, b in zip(eps_list, eps_list[1:])):
        raise ConfigError(f"{path}.eps_list", "must be strictly ascending")
    attack_raw = _take(d, "attack", path, None)
    if attack_raw is None:
        attack = AttackSpec(steps=20)
    else:
        attack = parse_attack(attack_raw, f"{path}.attack", require_epsilon=False)
    if attack.random_start:
        raise ConfigError(f"{path}.attack.random_start",
                          "evaluation attacks must be deterministic")
    views_raw = _take(d, "views", path, None)
    if views_raw is None:
        views = (("clean", 1.0), ("high", 1.8), ("low", 0.4))
    else:
        views = []
        for i, entry in enumerate(_list(views_raw, f"{path}.views")):
            p = f"{path}.views[{i}]"
            vd = _obj(entry, p)
            name = _str(_take(vd, "name", p), f"{p}.name")
            gamma = _float(_take(vd, "gamma", p), f"{p}.gamma")
            _reject_unknown(vd, p)
            if gamma < 0:
                raise ConfigError(f"{p}.gamma", "must be >= 0")
            views.append((name, gamma))
        names = [n for n, _ in views]
        if len(set(names)) != len(names):
            raise ConfigError(f"{path}.views", "duplicate view names")
        if ("clean", 1.0) not in views:
            raise ConfigError(f"{path}.views",
                              'must include {"name": "clean", "gamma": 1.0}')
        views = tuple(views)
    bins = _int(_take(d, "bins", path, 20), f"{path}.bins")
    if bins < 2:
        raise ConfigError(f"{path}.bins", "must be >= 2")
    _reject_unknown(d, path)
    return EvalConfig(eps_list=eps_list, attack=attack, views=views, bins=bins)


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig
    model: ModelConfig
    sgd: SgdConfig
    objective: ObjectiveSpec = None     # train command
    objectives: tuple = None            # bench command
    eval_cfg: EvalConfig = None
    seeds: tuple = (0, 1, 2, 3, 4)
    output_dir: str = None


def parse_run_config(root):
    d = _obj(root, "")
    dataset = parse_dataset(_take(d, "dataset", "", {}), "dataset")
    model = parse_model(_take(d, "model", "", {}), "model")
    sgd = parse_sgd(_take(d, "sgd", "", {}), "sgd")
    obj_raw = _take(d, "objective", "", None)
    objs_raw = _take(d, "objectives", "", None)
    if obj_raw is not None and objs_raw is not None:
        raise ConfigError("objectives", 'give either "objective" or "objectives"')
    objective = None if obj_raw is None else parse_objective(obj_raw, "objective")
    objectives = None
    if objs_raw is not None:
        items = _list(objs_raw, "objectives")
        if not items:
            raise ConfigError("objectives", "must be nonempty")
        objectives = tuple(parse_objective(o, f"objectives[{i}]")
                           for i, o in enumerate(items))
        kinds = [o.kind for o in objectives]
        if len(set(kinds)) != len(kinds):
            raise ConfigError("objectives", "duplicate objective kinds")
    eval_cfg = parse_eval(_take(d, "eval", "", {}), "eval")
    seeds_raw = _list(_take(d, "seeds", "", [0, 1, 2, 3, 4]), "seeds")
    if not seeds_raw:
        raise ConfigError("seeds", "must be nonempty")
    seeds = tuple(_int(s, "seeds") for s in seeds_raw)
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds", "must be >= 0")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")
    output_raw = _take(d, "output_dir", "", None)
    output_dir = None if output_raw is None else _str(output_raw, "output_dir")
    _reject_unknown(d, "")

    if dataset.kind == "synthetic":
        if model.input_size != dataset.synthetic.size:
            raise ConfigError(
                "model.input_size",
                f"{model.input_size} != dataset.size {dataset.synthetic.size}",
            )
        if model.num_classes != dataset.num_classes:
            raise ConfigError(
                "model.num_classes",
                f"{model.num_classes} != dataset.num_classes {dataset.num_classes}",
            )
        if model.input_channels != 1:
            raise ConfigError("model.input_channels",
                              "synthetic datasets are single-channel")
    return RunConfig(dataset=dataset, model=model, sgd=sgd, objective=objective,
                     objectives=objectives, eval_cfg=eval_cfg, seeds=seeds,
                     output_dir=output_dir)


def load_run_config(path):
    try:
        with open(path) as fh:
            root = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON in {path}: {exc}") from None
    return parse_run_config(root)


def realize_dataset(dcfg):
    """Materialize the configured dataset and apply the train/test split."""
    if dcfg.kind == "synthetic":
        ds = generate_synthetic(dcfg.synthetic)
    else:
        ds = load_dataset(dcfg.image_dir, dcfg.manifest, dcfg.num_classes)
    return split_dataset(ds, dcfg.train_fraction, dcfg.split_seed)
