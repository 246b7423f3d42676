"""Dataset layout, determinism, and loader tests."""

import hashlib
import json
import pathlib

import numpy as np
import pytest

from adamri import dataset, mri
from adamri.errors import CompatibilityError, ContractError

SPEC = dataset.DatasetSpec(
    height=16,
    width=16,
    num_coils=2,
    contrasts=("T1", "T2"),
    fields=(3.0,),
    accelerations=(2.0,),
    num_train_subjects=1,
    num_test_subjects=1,
    sigma_base=0.02,
    seed=5,
    acs_lines=4,
)


def _tree_digest(root):
    root = pathlib.Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_layout_and_counts(tmp_path):
    manifest = dataset.generate_dataset(tmp_path, SPEC)
    assert len(manifest["entries"]) == 2 * 1 * 2  # contrasts x fields x subjects
    d = tmp_path / manifest["entries"][0]["dir"]
    for fname in ("image.bin", "coils.bin", "mask_2.bin", "kspace_2.bin", "meta.json"):
        assert (d / fname).exists(), fname
    img = np.frombuffer((d / "image.bin").read_bytes(), dtype="<c8")
    assert img.size == 16 * 16
    ksp = np.frombuffer((d / "kspace_2.bin").read_bytes(), dtype="<c8")
    assert ksp.size == 2 * 16 * 16


def test_regeneration_is_byte_identical(tmp_path):
    dataset.generate_dataset(tmp_path / "a", SPEC)
    dataset.generate_dataset(tmp_path / "b", SPEC)
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")


def test_different_seed_changes_bytes(tmp_path):
    import dataclasses

    dataset.generate_dataset(tmp_path / "a", SPEC)
    dataset.generate_dataset(tmp_path / "b", dataclasses.replace(SPEC, seed=6))
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "b")


def test_existing_dataset_needs_force(tmp_path):
    dataset.generate_dataset(tmp_path, SPEC)
    with pytest.raises(ContractError):
        dataset.generate_dataset(tmp_path, SPEC)
    dataset.generate_dataset(tmp_path, SPEC, force=True)  # no error


def test_loaded_sample_consistent_with_generator(tmp_path):
    manifest = dataset.generate_dataset(tmp_path, SPEC)
    entry = manifest["entries"][0]
    s = dataset.load_sample(tmp_path, entry, 2.0)

    assert s.image.shape == (16, 16) and s.image.dtype == np.complex64
    assert s.kspace.grids.shape == (2, 16, 16)
    assert s.setup.coils.maps.shape == (2, 16, 16)
    assert s.condition.shape == (5,)
    assert s.atb.shape == (16, 16)
    assert s.noise_sigma == mri.noise_sigma_for_field(s.field_strength, SPEC.sigma_base)
    assert s.acs_lines == SPEC.acs_lines

    # k-space restricted to mask; re-simulating with the stored seed matches
    off = np.setdiff1d(np.arange(16), s.setup.mask.kept_lines)
    assert np.abs(s.kspace.grids[:, :, off]).max() == 0.0

    # zero-filled image correlates with the ground truth
    corr = np.abs(np.vdot(s.atb, s.image)) / (np.linalg.norm(s.atb) * np.linalg.norm(s.image))
    assert corr > 0.9


def test_split_loading(tiny_root):
    train = dataset.load_split(tiny_root, "train")
    test = dataset.load_split(tiny_root, "test")
    # 2 contrasts x 2 fields x subjects x 2 accelerations
    assert len(train) == 2 * 2 * 2 * 2
    assert len(test) == 2 * 2 * 1 * 2
    assert {s.split for s in train} == {"train"}
    assert {s.split for s in test} == {"test"}
    assert {s.subject for s in test} == {2}

    t2_only = dataset.load_split(tiny_root, "train", settings=["T2-3T"])
    assert {s.setting for s in t2_only} == {"T2-3T"}
    assert len(t2_only) == 2 * 2  # subjects x accelerations

    with pytest.raises(ContractError):
        dataset.load_split(tiny_root, "validation")
    with pytest.raises(ContractError):
        dataset.load_split(tiny_root, "train", settings=["T1-7T"])


def test_group_by_setting(tiny_root):
    groups = dataset.group_by_setting(dataset.load_split(tiny_root, "train"))
    assert sorted(groups) == ["FLAIR-1.5T", "FLAIR-3T", "T2-1.5T", "T2-3T"]
    for name, members in groups.items():
        assert all(s.setting == name for s in members)


def test_schema_violations_raise(tmp_path):
    with pytest.raises(CompatibilityError):
        dataset.load_manifest(tmp_path)

    manifest = dataset.generate_dataset(tmp_path, SPEC)
    entry = manifest["entries"][0]

    # unknown acceleration
    with pytest.raises(CompatibilityError):
        dataset.load_sample(tmp_path, entry, 9.0)

    # truncated file
    p = tmp_path / entry["dir"] / "image.bin"
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(CompatibilityError):
        dataset.load_sample(tmp_path, entry, 2.0)

    # wrong format version
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["format_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(CompatibilityError):
        dataset.load_manifest(tmp_path)


def test_noise_scaling_between_fields(tmp_path):
    import dataclasses

    spec = dataclasses.replace(SPEC, fields=(1.5, 3.0), sigma_base=0.05)
    manifest = dataset.generate_dataset(tmp_path, spec, force=False)
    sig = {}
    for entry in manifest["entries"]:
        meta = json.loads((tmp_path / entry["dir"] / "meta.json").read_text())
        sig[meta["field_strength"]] = meta["noise_sigma"]
    assert sig[1.5] == 2 * sig[3.0] == 0.1
