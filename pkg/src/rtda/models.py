"""Compact residual convolutional classifier and plain SGD.

Architecture: 3x3 conv stem, then one stage per entry of stage_widths.
Each stage holds pre-activation residual blocks (two 3x3 convs, additive
skip with a fixed branch scale standing in for normalization); stages
after the first start with a 2x2 average-pool downsample and a 1x1
projection to the new width.  Global average pool and an affine head
finish the network.  No momentum, no batch norm: every update is exactly
theta - lr * grad.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from . import tensorio
from .autodiff import Tensor
from .errors import ConfigError, FormatError, ShapeError, UsageError

RESIDUAL_SCALE = 0.5


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 1
    input_size: int = 16
    num_classes: int = 2
    stage_widths: tuple = (8, 16)
    blocks_per_stage: int = 1
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("model.num_classes", "must be >= 2")
        if self.input_size < 8:
            raise ConfigError("model.input_size", "must be >= 8")
        if not self.stage_widths:
            raise ConfigError("model.stage_widths", "must be nonempty")
        if self.blocks_per_stage < 1:
            raise ConfigError("model.blocks_per_stage", "must be >= 1")
        down = 2 ** (len(self.stage_widths) - 1)
        if self.input_size % down:
            raise ConfigError(
                "model.input_size",
                f"{self.input_size} not divisible by cumulative pooling {down}",
            )


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    decay_factor: float = 10.0
    decay_every_epochs: int = 5
    epochs: int = 10
    batch_size: int = 64

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("sgd.learning_rate", "must be > 0")
        if self.decay_factor < 1:
            raise ConfigError("sgd.decay_factor", "must be >= 1")
        if self.decay_every_epochs < 1:
            raise ConfigError("sgd.decay_every_epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("sgd.batch_size", "must be >= 1")
        if self.epochs < 0:
            raise ConfigError("sgd.epochs", "must be >= 0")


class ParameterSet:
    """Ordered name -> Tensor map; every tensor requires gradients."""

    def __init__(self, init_seed):
        self.init_seed = init_seed
        self._tensors = {}

    def add(self, name, array):
        if name in self._tensors:
            raise UsageError(f"duplicate parameter name {name!r}")
        self._tensors[name] = Tensor(array, requires_grad=True)

    def __getitem__(self, name):
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors.items())

    def __len__(self):
        return len(self._tensors)

    def names(self):
        return list(self._tensors)

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def num_values(self):
        return sum(t.data.size for t in self._tensors.values())

    def freeze(self):
        for t in self._tensors.values():
            t.requires_grad = False

    def unfreeze(self):
        for t in self._tensors.values():
            t.requires_grad = True

    def copy(self):
        out = ParameterSet(self.init_seed)
        for name, t in self:
            out.add(name, t.data.copy())
        return out


class frozen:
    """Context manager disabling parameter gradients (attack passes)."""

    def __init__(self, params):
        self.params = params

    def __enter__(self):
        self.params.freeze()
        return self.params

    def __exit__(self, *exc):
        self.params.unfreeze()
        return False


def _uniform(rng, shape, fan_in):
    # He-style uniform: keeps activation variance roughly constant through
    # relu stacks, which plain SGD at small learning rates depends on
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Model:
    def __init__(self, config, params):
        self.config = config
        self.params = params

    def forward(self, x):
        """Logits [B, num_classes] for images x [B, C, H, W]."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        cfg = self.config
        if x.ndim != 4 or x.shape[1:] != (cfg.input_channels, cfg.input_size, cfg.input_size):
            raise ShapeError(
                f"forward: expected [B, {cfg.input_channels}, {cfg.input_size}, "
                f"{cfg.input_size}], got {x.shape}"
            )
        p = self.params
        h = ad.conv2d(x, p["stem.w"], p["stem.b"], padding=1)
        for si, width in enumerate(cfg.stage_widths):
            if si > 0:
                h = ad.avg_pool2d(h, 2)
                h = ad.conv2d(h, p[f"stage{si}.proj.w"], p[f"stage{si}.proj.b"])
            for bi in range(cfg.blocks_per_stage):
                tag = f"stage{si}.block{bi}"
                r = ad.relu(h)
                r = ad.conv2d(r, p[f"{tag}.conv1.w"], p[f"{tag}.conv1.b"], padding=1)
                r = ad.relu(r)
                r = ad.conv2d(r, p[f"{tag}.conv2.w"], p[f"{tag}.conv2.b"], padding=1)
                h = ad.add(h, ad.mul(r, Tensor(RESIDUAL_SCALE)))
        h = ad.relu(h)
        spatial = h.shape[2]
        h = ad.avg_pool2d(h, spatial)
        h = ad.reshape(h, (h.shape[0], h.shape[1]))
        return ad.affine(h, p["head.w"], p["head.b"])


def build_model(config):
    config.validate()
    rng = rngmod.stream(config.seed, rngmod.INIT)
    params = ParameterSet(config.seed)

    c_in = config.input_channels
    w0 = config.stage_widths[0]
    params.add("stem.w", _uniform(rng, (w0, c_in, 3, 3), c_in * 9))
    params.add("stem.b", np.zeros(w0))
    prev = w0
    for si, width in enumerate(config.stage_widths):
        if si > 0:
            params.add("stage{}.proj.w".format(si), _uniform(rng, (width, prev, 1, 1), prev))
            params.add("stage{}.proj.b".format(si), np.zeros(width))
            prev = width
        for bi in range(config.blocks_per_stage):
            tag = f"stage{si}.block{bi}"
            params.add(f"{tag}.conv1.w", _uniform(rng, (width, width, 3, 3), width * 9))
            params.add(f"{tag}.conv1.b", np.zeros(width))
            params.add(f"{tag}.conv2.w", _uniform(rng, (width, width, 3, 3), width * 9))
            params.add(f"{tag}.conv2.b", np.zeros(width))
    last = config.stage_widths[-1]
    params.add("head.w", _uniform(rng, (last, config.num_classes), last))
    params.add("head.b", np.zeros(config.num_classes))
    return Model(config, params)


def sgd_step(params, lr):
    """theta <- theta - lr * grad, elementwise, no momentum."""
    for name, t in params:
        if t.grad is None:
            raise UsageError(f"sgd_step: parameter {name!r} has no gradient")
        t.data -= lr * t.grad


def lr_at_epoch(config, epoch):
    if epoch < 0:
        raise UsageError("epoch must be >= 0")
    return config.learning_rate / config.decay_factor ** (epoch // config.decay_every_epochs)


# ---------------------------------------------------------------------------
# persistence: concatenated interchange records plus a JSON sidecar


def _sidecar_path(path):
    return str(path) + ".json"


def save_params(model, path, extra=None):
    """Write parameters to ``path`` and a JSON sidecar to ``path + '.json'``."""
    params = model.params
    with open(path, "wb") as fh:
        for _, t in params:
            tensorio.write_tensor(fh, t.data)
    meta = {
        "layers": [
            {"name": name, "shape": list(t.data.shape)} for name, t in params
        ],
        "config": _config_dict(model.config),
        "seed": params.init_seed,
    }
    if extra:
        meta.update(extra)
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _config_dict(config):
    d = asdict(config)
    d["stage_widths"] = list(config.stage_widths)
    return d


def _config_from_dict(d):
    return ModelConfig(
        input_channels=d["input_channels"],
        input_size=d["input_size"],
        num_classes=d["num_classes"],
        stage_widths=tuple(d["stage_widths"]),
        blocks_per_stage=d["blocks_per_stage"],
        seed=d["seed"],
    )


def load_params(path):
    """Rebuild a Model from ``path`` and its sidecar. Bit-exact."""
    with open(_sidecar_path(path)) as fh:
        meta = json.load(fh)
    config = _config_from_dict(meta["config"])
    params = ParameterSet(meta["seed"])
    with open(path, "rb") as fh:
        for layer in meta["layers"]:
            arr = tensorio.read_tensor(fh)
            if list(arr.shape) != layer["shape"]:
                raise FormatError(
                    f"layer {layer['name']!r}: stored shape {list(arr.shape)} "
                    f"!= sidecar shape {layer['shape']}"
                )
            params.add(layer["name"], arr)
    return Model(config, params), meta
