import numpy as np
import pytest

from adamri import dataset, mri


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """A small on-disk dataset shared by loader/training/CLI tests."""
    root = tmp_path_factory.mktemp("tiny-data")
    spec = dataset.DatasetSpec(
        height=24,
        width=24,
        num_coils=4,
        contrasts=("T2", "FLAIR"),
        fields=(1.5, 3.0),
        accelerations=(2.0, 3.0),
        num_train_subjects=2,
        num_test_subjects=1,
        sigma_base=0.01,
        seed=0,
        acs_lines=4,
    )
    dataset.generate_dataset(root, spec)
    return root


@pytest.fixture()
def small_setup():
    """4-coil 16x16 acquisition used by operator-level tests."""
    coils = mri.make_coils(4, 16, 16)
    mask = mri.make_mask(16, 16, 2.0, seed=3, acs_lines=4)
    return mri.AcquisitionSetup(coils=coils, mask=mask)


def rand_image(rng, h, w, dtype=np.complex128):
    return (rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))).astype(dtype)
