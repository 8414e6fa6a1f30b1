from __future__ import annotations

import os

import numpy as np
import pytest

from rtda import models as m
from rtda import tensorio
from rtda.autodiff import Tensor
from rtda.errors import ConfigError, FormatError, ShapeError, UsageError

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def test_build_deterministic():
    a = m.build_model(m.ModelConfig(seed=7))
    b = m.build_model(m.ModelConfig(seed=7))
    assert a.params.names() == b.params.names()
    for name, t in a.params:
        assert np.array_equal(t.data, b.params[name].data), name


def test_build_seed_changes_weights():
    a = m.build_model(m.ModelConfig(seed=0))
    b = m.build_model(m.ModelConfig(seed=1))
    assert not np.array_equal(a.params["stem.w"].data, b.params["stem.w"].data)


def test_head_shape_three_classes():
    model = m.build_model(m.ModelConfig(num_classes=3, seed=0))
    x = np.random.default_rng(0).uniform(0, 1, size=(4, 1, 16, 16))
    assert model.forward(Tensor(x)).shape == (4, 3)


def test_parameter_count_matches_hand_sum():
    cfg = m.ModelConfig(stage_widths=(8, 16), blocks_per_stage=1, input_channels=1)
    model = m.build_model(cfg)
    # layer-by-layer: stem 8*1*3*3+8, block0 convs 2*(8*8*9+8),
    # stage1 projection 16*8+16, block convs 2*(16*16*9+16), head 16*2+2
    want = (72 + 8) + 2 * (576 + 8) + (128 + 16) + 2 * (2304 + 16) + (32 + 2)
    assert want == 6066
    assert model.params.num_values() == want


def test_all_params_require_grad():
    model = m.build_model(m.ModelConfig())
    assert all(t.requires_grad for _, t in model.params)
    assert all(t.data.dtype == np.float64 for _, t in model.params)


def test_config_rejects_bad_pooling():
    with pytest.raises(ConfigError, match="divisible"):
        m.ModelConfig(input_size=10, stage_widths=(4, 4, 4)).validate()
    with pytest.raises(ConfigError):
        m.ModelConfig(num_classes=1).validate()
    with pytest.raises(ConfigError):
        m.ModelConfig(stage_widths=()).validate()


def test_forward_identical_rows():
    model = m.build_model(m.ModelConfig(seed=3))
    one = np.random.default_rng(5).uniform(0, 1, size=(1, 1, 16, 16))
    x = np.concatenate([one, one], axis=0)
    logits = model.forward(Tensor(x)).data
    assert np.array_equal(logits[0], logits[1])


def test_forward_batch_permutation_equivariant():
    model = m.build_model(m.ModelConfig(seed=3))
    x = np.random.default_rng(6).uniform(0, 1, size=(5, 1, 16, 16))
    perm = np.array([3, 0, 4, 1, 2])
    a = model.forward(Tensor(x)).data
    b = model.forward(Tensor(x[perm])).data
    assert np.allclose(a[perm], b, atol=1e-12)


def test_zeroed_head_gives_zero_logits():
    model = m.build_model(m.ModelConfig(seed=1))
    model.params["head.w"].data[:] = 0.0
    model.params["head.b"].data[:] = 0.0
    x = np.random.default_rng(7).uniform(0, 1, size=(3, 1, 16, 16))
    assert np.all(model.forward(Tensor(x)).data == 0.0)


def test_forward_shape_error():
    model = m.build_model(m.ModelConfig())
    with pytest.raises(ShapeError):
        model.forward(Tensor(np.zeros((1, 1, 8, 8))))


def test_forward_matches_golden_fixture():
    """Logits for a frozen input must match the stored golden tensor.

    Guards initialization, layer order, and conv semantics against silent
    drift; regenerate deliberately via tests/fixtures/make_golden.py.
    """
    model = m.build_model(m.ModelConfig(seed=0))
    x = tensorio.load_tensor(os.path.join(FIXTURES, "forward_input.rtns"))
    want = tensorio.load_tensor(os.path.join(FIXTURES, "forward_logits.rtns"))
    got = model.forward(Tensor(x)).data
    assert np.max(np.abs(got - want)) < 1e-12


def test_sgd_step_examples():
    model = m.build_model(m.ModelConfig(seed=0))
    before = {name: t.data.copy() for name, t in model.params}
    for _, t in model.params:
        t.grad = np.ones_like(t.data)
    m.sgd_step(model.params, 0.0)
    assert all(np.array_equal(model.params[n].data, before[n]) for n in before)
    m.sgd_step(model.params, 0.5)
    assert np.allclose(model.params["stem.b"].data, before["stem.b"] - 0.5)


def test_sgd_step_scalar_arithmetic():
    p = m.ParameterSet(0)
    p.add("w", np.array([1.0]))
    p["w"].grad = np.array([2.0])
    m.sgd_step(p, 0.1)
    assert np.allclose(p["w"].data, [0.8])


def test_sgd_step_quadratic():
    # one step on (theta-3)^2 from 0 with lr 0.1: grad -6, theta -> 0.6
    p = m.ParameterSet(0)
    p.add("theta", np.array([0.0]))
    t = p["theta"]
    from rtda import autodiff as ad

    loss = ad.tsum(ad.mul(t - 3.0, t - 3.0))
    loss.backward()
    m.sgd_step(p, 0.1)
    assert np.allclose(t.data, [0.6])


def test_sgd_step_missing_grad_names_param():
    model = m.build_model(m.ModelConfig(seed=0))
    with pytest.raises(UsageError, match="stem.w"):
        m.sgd_step(model.params, 0.1)


def test_lr_schedule():
    cfg = m.SgdConfig(learning_rate=0.01, decay_factor=10.0, decay_every_epochs=5)
    assert m.lr_at_epoch(cfg, 0) == 0.01
    assert m.lr_at_epoch(cfg, 4) == 0.01
    assert abs(m.lr_at_epoch(cfg, 5) - 0.001) < 1e-18
    assert abs(m.lr_at_epoch(cfg, 14) - 0.0001) < 1e-18
    flat = m.SgdConfig(learning_rate=0.3, decay_factor=1.0, decay_every_epochs=5)
    assert all(m.lr_at_epoch(flat, e) == 0.3 for e in range(20))


def test_frozen_context_restores():
    model = m.build_model(m.ModelConfig(seed=0))
    with m.frozen(model.params):
        assert not any(t.requires_grad for _, t in model.params)
    assert all(t.requires_grad for _, t in model.params)


def test_save_load_round_trip(tmp_path):
    model = m.build_model(m.ModelConfig(seed=9))
    path = tmp_path / "m.rtns"
    m.save_params(model, path, extra={"objective": "standard", "train_seed": 9})
    back, meta = m.load_params(path)
    assert back.config == model.config
    assert back.params.names() == model.params.names()
    for name, t in model.params:
        assert np.array_equal(t.data, back.params[name].data)
    assert meta["objective"] == "standard"
    assert meta["train_seed"] == 9
    # loaded model computes identical logits
    x = np.random.default_rng(2).uniform(0, 1, size=(2, 1, 16, 16))
    assert np.array_equal(model.forward(Tensor(x)).data, back.forward(Tensor(x)).data)


def test_load_rejects_corrupt_file(tmp_path):
    model = m.build_model(m.ModelConfig(seed=0))
    path = tmp_path / "m.rtns"
    m.save_params(model, path)
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        m.load_params(path)


def test_load_rejects_sidecar_shape_mismatch(tmp_path):
    model = m.build_model(m.ModelConfig(seed=0))
    path = tmp_path / "m.rtns"
    m.save_params(model, path)
    sidecar = str(path) + ".json"
    import json

    meta = json.load(open(sidecar))
    meta["layers"][0]["shape"] = [1, 1, 1, 1]
    json.dump(meta, open(sidecar, "w"))
    with pytest.raises(FormatError, match="shape"):
        m.load_params(path)


def test_duplicate_param_name_rejected():
    p = m.ParameterSet(0)
    p.add("w", np.zeros(2))
    with pytest.raises(UsageError):
        p.add("w", np.zeros(2))
