"""Checkpoint persistence tests: byte-identity, validation, replay."""

import json

import numpy as np
import pytest

from adamri import autodiff, checkpoint, conditioning, mri, unrolled
from adamri.errors import CompatibilityError
from adamri.optim import Adam

from conftest import rand_image


def _trained_model(seed=0, mode="ada"):
    cfg = unrolled.UnrollConfig(num_steps=2, num_channels=4, mode=mode, mlp_width=8)
    model = unrolled.ReconModel(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    for t in model.parameters().values():
        t.data += rng.standard_normal(t.data.shape).astype(t.data.dtype) * 0.01
    return model


def test_save_load_roundtrip_bitwise(tmp_path):
    model = _trained_model()
    checkpoint.save_checkpoint(tmp_path / "a", model)
    loaded, opt_state, manifest = checkpoint.load_checkpoint(tmp_path / "a")
    assert opt_state is None
    for name, t in model.parameters().items():
        lt = loaded.parameters()[name]
        assert t.data.dtype == lt.data.dtype
        assert np.array_equal(t.data, lt.data), name

    # saving the loaded model reproduces the files byte for byte
    checkpoint.save_checkpoint(tmp_path / "b", loaded)
    assert (tmp_path / "a" / "tensors.bin").read_bytes() == (tmp_path / "b" / "tensors.bin").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_roundtrip_preserves_forward_output(tmp_path, small_setup):
    rng = np.random.default_rng(1)
    atb = mri.adjoint_A(mri.forward_A(rand_image(rng, 16, 16), small_setup), small_setup).astype(np.complex64)
    vec = conditioning.encode_condition("T2", 3.0, 2.0)

    model = _trained_model(seed=2)
    with autodiff.no_grad():
        before = model.reconstruct(atb, small_setup, vec).data
    checkpoint.save_checkpoint(tmp_path / "ck", model)
    loaded, _, _ = checkpoint.load_checkpoint(tmp_path / "ck")
    with autodiff.no_grad():
        after = loaded.reconstruct(atb, small_setup, vec).data
    assert np.array_equal(before, after)


def test_optimizer_state_roundtrip(tmp_path):
    model = _trained_model(seed=3, mode="plain")
    opt = Adam(model.parameters(), lr=1e-3)
    for t in model.parameters().values():
        t.grad = np.ones_like(t.data) * 0.1
    opt.step()
    checkpoint.save_checkpoint(tmp_path / "ck", model, optimizer=opt)

    loaded, opt_state, _ = checkpoint.load_checkpoint(tmp_path / "ck")
    assert opt_state is not None and opt_state["t"] == 1
    opt2 = Adam(loaded.parameters(), lr=1e-3)
    opt2.load_state(opt_state["t"], opt_state["m"], opt_state["v"])
    for k in opt.m:
        assert np.array_equal(opt.m[k], opt2.m[k])
        assert np.array_equal(opt.v[k], opt2.v[k])


def test_architecture_mismatch_rejected(tmp_path):
    model = _trained_model()
    checkpoint.save_checkpoint(tmp_path / "ck", model)
    wrong = unrolled.UnrollConfig(num_steps=2, num_channels=8, mode="ada", mlp_width=8)
    with pytest.raises(CompatibilityError):
        checkpoint.load_checkpoint(tmp_path / "ck", expect_cfg=wrong)


def test_corrupt_files_rejected(tmp_path):
    model = _trained_model()
    checkpoint.save_checkpoint(tmp_path / "ck", model)

    # truncated tensor blob
    blob = (tmp_path / "ck" / "tensors.bin").read_bytes()
    (tmp_path / "ck" / "tensors.bin").write_bytes(blob[:-8])
    with pytest.raises(CompatibilityError):
        checkpoint.load_checkpoint(tmp_path / "ck")
    (tmp_path / "ck" / "tensors.bin").write_bytes(blob)

    # invalid JSON
    (tmp_path / "ck" / "manifest.json").write_text("{not json")
    with pytest.raises(CompatibilityError):
        checkpoint.load_checkpoint(tmp_path / "ck")

    # wrong schema name
    checkpoint.save_checkpoint(tmp_path / "ck2", model)
    doc = json.loads((tmp_path / "ck2" / "manifest.json").read_text())
    doc["schema"] = "something-else"
    (tmp_path / "ck2" / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(CompatibilityError):
        checkpoint.load_checkpoint(tmp_path / "ck2")

    # condition schema drift
    checkpoint.save_checkpoint(tmp_path / "ck3", model)
    doc = json.loads((tmp_path / "ck3" / "manifest.json").read_text())
    doc["condition_schema"]["layout"] = ["a", "b"]
    (tmp_path / "ck3" / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(CompatibilityError):
        checkpoint.load_checkpoint(tmp_path / "ck3")


def test_missing_parameter_rejected_without_partial_load(tmp_path):
    model = _trained_model()
    checkpoint.save_checkpoint(tmp_path / "ck", model)
    doc = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    doc["tensors"] = [r for r in doc["tensors"] if r["name"] != "cnn.w0"]
    (tmp_path / "ck" / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(CompatibilityError):
        checkpoint.load_checkpoint(tmp_path / "ck")


def test_missing_directory(tmp_path):
    with pytest.raises(CompatibilityError):
        checkpoint.load_checkpoint(tmp_path / "nope")
