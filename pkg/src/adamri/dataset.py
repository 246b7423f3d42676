"""Synthetic dataset generation and loading.

A dataset root contains one directory per (contrast, field, subject)
combination plus a top-level ``manifest.json``. Each entry directory holds

    image.bin           ground-truth complex image, [H, W]
    coils.bin           sensitivity maps, [C, H, W]
    mask_<R>.bin        kept phase-encode lines for acceleration R, int64
    kspace_<R>.bin      noisy undersampled k-space, [C, H, W]
    meta.json           shapes, seeds, noise level, acceleration list

All complex arrays are stored as little-endian complex64 (interleaved
float32 real/imaginary pairs); integers are little-endian int64.
Generation is fully seeded, so regenerating with the same parameters
reproduces every file byte for byte.
"""

import dataclasses
import json
import pathlib
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import conditioning, mri
from .errors import CompatibilityError, ContractError

FORMAT_VERSION = 1
SCHEMA_NAME = "adamri-dataset"
_COMPLEX_DTYPE = np.dtype("<c8")
_INT_DTYPE = np.dtype("<i8")


@dataclasses.dataclass(frozen=True)
class DatasetSpec:
    height: int = 48
    width: int = 48
    num_coils: int = 16
    contrasts: Tuple[str, ...] = ("T1", "T2", "FLAIR")
    fields: Tuple[float, ...] = (1.5, 3.0)
    accelerations: Tuple[float, ...] = (2.5, 4.0)
    num_train_subjects: int = 4
    num_test_subjects: int = 2
    sigma_base: float = 0.01
    seed: int = 0
    acs_lines: int = 8
    mask_kind: str = "poisson_disc_1d"

    def __post_init__(self):
        for c in self.contrasts:
            if c not in mri.CONTRASTS:
                raise ContractError(f"unknown contrast {c!r}")
        for f in self.fields:
            if f not in mri.FIELD_STRENGTHS:
                raise ContractError(f"unknown field strength {f}")
        if self.num_train_subjects < 1 or self.num_test_subjects < 0:
            raise ContractError("need at least one training subject")


@dataclasses.dataclass
class Sample:
    """One loaded scan at one acceleration."""

    image: np.ndarray  # complex64 [H, W]
    kspace: mri.KSpace
    setup: mri.AcquisitionSetup
    condition: np.ndarray
    contrast: str
    field_strength: float
    acceleration: float
    subject: int
    split: str
    # acquisition parameters, kept so training can re-simulate the scan with a
    # fresh mask and noise draw (mask augmentation)
    noise_sigma: float = 0.0
    acs_lines: int = 0
    _atb: Optional[np.ndarray] = dataclasses.field(default=None, repr=False)

    @property
    def atb(self) -> np.ndarray:
        if self._atb is None:
            self._atb = mri.adjoint_A(self.kspace, self.setup)
        return self._atb

    @property
    def setting(self) -> str:
        return conditioning.setting_name(self.contrast, self.field_strength)


def _accel_key(r: float) -> str:
    return format(float(r), "g")


def _entry_dir(contrast: str, field: float, subject: int) -> str:
    return f"{contrast}_{conditioning.setting_name(contrast, field).split('-')[1]}_subj{subject:03d}"


def _subject_seed(spec: DatasetSpec, subject: int) -> int:
    return spec.seed * 10007 + subject


def generate_dataset(root, spec: DatasetSpec, force: bool = False) -> dict:
    """Write a complete dataset under ``root`` and return its manifest."""
    root = pathlib.Path(root)
    manifest_path = root / "manifest.json"
    if manifest_path.exists() and not force:
        raise ContractError(f"{manifest_path} already exists; pass force=True to overwrite")
    root.mkdir(parents=True, exist_ok=True)

    n_subjects = spec.num_train_subjects + spec.num_test_subjects
    coils = mri.make_coils(spec.num_coils, spec.height, spec.width)
    coil_bytes = coils.maps.astype(_COMPLEX_DTYPE).tobytes()

    entries = []
    for contrast in spec.contrasts:
        for field in spec.fields:
            sigma = mri.noise_sigma_for_field(field, spec.sigma_base)
            for subject in range(n_subjects):
                rel = _entry_dir(contrast, field, subject)
                d = root / rel
                d.mkdir(parents=True, exist_ok=True)
                pspec = mri.PhantomSpec(
                    contrast=contrast,
                    field_strength=field,
                    subject_seed=_subject_seed(spec, subject),
                    height=spec.height,
                    width=spec.width,
                )
                image = mri.make_phantom(pspec).astype(_COMPLEX_DTYPE)
                (d / "image.bin").write_bytes(image.tobytes())
                (d / "coils.bin").write_bytes(coil_bytes)

                accel_files = {}
                for r in spec.accelerations:
                    key = _accel_key(r)
                    scan_seed = _scan_seed(spec, contrast, field, subject, r)
                    mask = mri.make_mask(
                        spec.height,
                        spec.width,
                        r,
                        kind=spec.mask_kind,
                        seed=scan_seed,
                        acs_lines=spec.acs_lines,
                    )
                    setup = mri.AcquisitionSetup(coils=coils, mask=mask)
                    ksp = mri.simulate_acquisition(
                        image.astype(np.complex128), setup, sigma, seed=scan_seed
                    )
                    (d / f"mask_{key}.bin").write_bytes(
                        mask.kept_lines.astype(_INT_DTYPE).tobytes()
                    )
                    (d / f"kspace_{key}.bin").write_bytes(
                        ksp.grids.astype(_COMPLEX_DTYPE).tobytes()
                    )
                    accel_files[key] = {
                        "acceleration": float(r),
                        "kept_lines": int(len(mask.kept_lines)),
                        "mask_file": f"mask_{key}.bin",
                        "kspace_file": f"kspace_{key}.bin",
                    }

                meta = {
                    "contrast": contrast,
                    "field_strength": field,
                    "subject": subject,
                    "subject_seed": _subject_seed(spec, subject),
                    "height": spec.height,
                    "width": spec.width,
                    "num_coils": spec.num_coils,
                    "noise_sigma": sigma,
                    "acs_lines": spec.acs_lines,
                    "accelerations": accel_files,
                }
                (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
                entries.append(
                    {
                        "dir": rel,
                        "contrast": contrast,
                        "field_strength": field,
                        "subject": subject,
                        "split": "train" if subject < spec.num_train_subjects else "test",
                    }
                )

    manifest = {
        "schema": SCHEMA_NAME,
        "format_version": FORMAT_VERSION,
        "spec": dataclasses.asdict(spec),
        "train_subjects": list(range(spec.num_train_subjects)),
        "test_subjects": list(range(spec.num_train_subjects, n_subjects)),
        "entries": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _scan_seed(spec: DatasetSpec, contrast: str, field: float, subject: int, r: float) -> int:
    mix = np.random.SeedSequence(
        [
            0x9A0D,
            spec.seed,
            subject,
            mri.CONTRASTS.index(contrast),
            mri.FIELD_STRENGTHS.index(field),
            int(round(float(r) * 1000)),
        ]
    )
    return int(mix.generate_state(1, np.uint32)[0])


def load_manifest(root) -> dict:
    root = pathlib.Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise CompatibilityError(f"no manifest.json under {root}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise CompatibilityError(f"corrupt manifest {path}: {e}") from None
    if manifest.get("schema") != SCHEMA_NAME:
        raise CompatibilityError(f"{path} is not a {SCHEMA_NAME} manifest")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(
            f"dataset format version {manifest.get('format_version')} unsupported (want {FORMAT_VERSION})"
        )
    return manifest


def _read_array(path: pathlib.Path, dtype, shape) -> np.ndarray:
    if not path.exists():
        raise CompatibilityError(f"missing dataset file {path}")
    buf = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(buf) != expected:
        raise CompatibilityError(f"{path}: expected {expected} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=dtype).reshape(shape)


def load_sample(root, entry: dict, acceleration: float) -> Sample:
    root = pathlib.Path(root)
    d = root / entry["dir"]
    meta_path = d / "meta.json"
    if not meta_path.exists():
        raise CompatibilityError(f"missing {meta_path}")
    meta = json.loads(meta_path.read_text())
    key = _accel_key(acceleration)
    if key not in meta["accelerations"]:
        raise CompatibilityError(
            f"{d} has no acceleration {key}; available: {sorted(meta['accelerations'])}"
        )
    acc = meta["accelerations"][key]
    h, w, c = meta["height"], meta["width"], meta["num_coils"]

    image = _read_array(d / "image.bin", _COMPLEX_DTYPE, (h, w)).astype(np.complex64)
    maps = _read_array(d / "coils.bin", _COMPLEX_DTYPE, (c, h, w)).astype(np.complex64)
    kept = _read_array(d / acc["mask_file"], _INT_DTYPE, (acc["kept_lines"],)).astype(np.int64)
    grids = _read_array(d / acc["kspace_file"], _COMPLEX_DTYPE, (c, h, w)).astype(np.complex64)

    mask = mri.SamplingMask(
        height=h,
        width=w,
        kept_lines=kept,
        pattern_kind="stored",
        acceleration=float(acc["acceleration"]),
    )
    setup = mri.AcquisitionSetup(coils=mri.CoilMaps(maps=maps), mask=mask)
    return Sample(
        image=image,
        kspace=mri.KSpace(grids=grids, mask=mask),
        setup=setup,
        condition=conditioning.encode_condition(
            meta["contrast"], meta["field_strength"], float(acc["acceleration"])
        ),
        contrast=meta["contrast"],
        field_strength=meta["field_strength"],
        acceleration=float(acc["acceleration"]),
        subject=meta["subject"],
        split=entry.get("split", "train"),
        noise_sigma=float(meta["noise_sigma"]),
        acs_lines=int(meta.get("acs_lines", 0)),
    )


def load_split(
    root,
    split: str,
    accelerations: Optional[Sequence[float]] = None,
    settings: Optional[Sequence[str]] = None,
) -> List[Sample]:
    """Load every sample of a split, optionally filtered by setting name."""
    if split not in ("train", "test"):
        raise ContractError(f"split must be 'train' or 'test', got {split!r}")
    manifest = load_manifest(root)
    if accelerations is None:
        accelerations = manifest["spec"]["accelerations"]
    samples = []
    for entry in manifest["entries"]:
        if entry["split"] != split:
            continue
        name = conditioning.setting_name(entry["contrast"], entry["field_strength"])
        if settings is not None and name not in settings:
            continue
        for r in accelerations:
            samples.append(load_sample(root, entry, r))
    if not samples:
        raise ContractError(f"no samples matched split={split!r}, settings={settings}")
    return samples


def group_by_setting(samples: Sequence[Sample]) -> Dict[str, List[Sample]]:
    groups: Dict[str, List[Sample]] = {}
    for s in samples:
        groups.setdefault(s.setting, []).append(s)
    return groups
