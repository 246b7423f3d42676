"""Checkpoint persistence.

A checkpoint is a directory with two files:

    manifest.json   model architecture, condition-vector schema, optional
                    optimizer step count and metric snapshot, and a table
                    of tensor records (name, dtype, shape, byte offset)
    tensors.bin     the raw little-endian tensor bytes, concatenated in
                    table order

Tensors are written in sorted-name order, so saving the same state twice
produces byte-identical files. Loading validates the schema and every
record before touching the target model; a corrupt or incompatible
checkpoint raises without leaving a half-loaded model behind.
"""

import dataclasses
import json
import pathlib
from typing import Dict, Optional, Tuple

import numpy as np

from . import dc, unrolled
from .conditioning import CONDITION_DIM
from .errors import CompatibilityError, ContractError
from .optim import Adam

FORMAT_VERSION = 1
SCHEMA_NAME = "adamri-checkpoint"
CONDITION_LAYOUT = ["T1", "T2", "FLAIR", "is_3T", "acceleration"]

_DTYPE_TAGS = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def _dtype_tag(dtype: np.dtype) -> str:
    for tag, dt in _DTYPE_TAGS.items():
        if dt == dtype:
            return tag
    raise ContractError(f"unsupported checkpoint dtype {dtype}")


def save_checkpoint(
    path,
    model: unrolled.ReconModel,
    optimizer: Optional[Adam] = None,
    metrics: Optional[dict] = None,
    config_hash: Optional[str] = None,
):
    path = pathlib.Path(path)
    path.mkdir(parents=True, exist_ok=True)

    arrays: Dict[str, np.ndarray] = {k: t.data for k, t in model.parameters().items()}
    opt_meta = None
    if optimizer is not None:
        state = optimizer.state()
        opt_meta = {"t": state["t"]}
        for k, arr in state["m"].items():
            arrays[f"opt.m.{k}"] = arr
        for k, arr in state["v"].items():
            arrays[f"opt.v.{k}"] = arr

    records = []
    blob = bytearray()
    for name in sorted(arrays):
        arr = arrays[name]
        tag = _dtype_tag(arr.dtype.newbyteorder("<"))
        # ascontiguousarray promotes 0-d to 1-d, so record the shape first
        data = np.ascontiguousarray(arr).astype(_DTYPE_TAGS[tag], copy=False).tobytes()
        records.append(
            {
                "name": name,
                "dtype": tag,
                "shape": list(arr.shape),
                "offset": len(blob),
                "nbytes": len(data),
            }
        )
        blob.extend(data)

    cfg = model.cfg
    manifest = {
        "schema": SCHEMA_NAME,
        "format_version": FORMAT_VERSION,
        "mode": cfg.mode,
        "num_steps": cfg.num_steps,
        "num_channels": cfg.num_channels,
        "mlp_width": cfg.mlp_width if cfg.mode == "ada" else None,
        "init_lam": cfg.init_lam,
        "cg": {"max_iters": cfg.cg.max_iters, "tol": cfg.cg.tol},
        "dtype": _dtype_tag(model.dtype.newbyteorder("<")),
        "condition_schema": {"dim": CONDITION_DIM, "layout": CONDITION_LAYOUT},
        "optimizer": opt_meta,
        "metrics": metrics,
        "config_hash": config_hash,
        "tensors": records,
    }
    (path / "tensors.bin").write_bytes(bytes(blob))
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(path) -> dict:
    path = pathlib.Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise CompatibilityError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise CompatibilityError(f"corrupt checkpoint manifest {mpath}: {e}") from None
    if manifest.get("schema") != SCHEMA_NAME:
        raise CompatibilityError(f"{mpath} is not a {SCHEMA_NAME} manifest")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CompatibilityError(
            f"checkpoint format version {manifest.get('format_version')} unsupported"
        )
    schema = manifest.get("condition_schema") or {}
    if schema.get("dim") != CONDITION_DIM or schema.get("layout") != CONDITION_LAYOUT:
        raise CompatibilityError(f"condition schema mismatch in {mpath}: {schema}")
    return manifest


def _read_tensors(path: pathlib.Path, manifest: dict) -> Dict[str, np.ndarray]:
    bpath = path / "tensors.bin"
    if not bpath.exists():
        raise CompatibilityError(f"missing tensors.bin under {path}")
    blob = bpath.read_bytes()
    out = {}
    total = 0
    for rec in manifest["tensors"]:
        dt = _DTYPE_TAGS.get(rec["dtype"])
        if dt is None:
            raise CompatibilityError(f"unknown tensor dtype {rec['dtype']!r} in {path}")
        expected = int(np.prod(rec["shape"], dtype=np.int64)) * dt.itemsize if rec["shape"] else dt.itemsize
        if rec["nbytes"] != expected:
            raise CompatibilityError(f"tensor {rec['name']!r}: record nbytes {rec['nbytes']} != {expected}")
        end = rec["offset"] + rec["nbytes"]
        if end > len(blob):
            raise CompatibilityError(f"tensor {rec['name']!r} extends past end of tensors.bin")
        arr = np.frombuffer(blob, dtype=dt, count=max(1, int(np.prod(rec["shape"], dtype=np.int64))), offset=rec["offset"])
        out[rec["name"]] = arr.reshape(rec["shape"]).copy()
        total = max(total, end)
    if total != len(blob):
        raise CompatibilityError(f"tensors.bin has {len(blob) - total} trailing bytes")
    return out


def config_from_manifest(manifest: dict) -> unrolled.UnrollConfig:
    return unrolled.UnrollConfig(
        num_steps=manifest["num_steps"],
        num_channels=manifest["num_channels"],
        mode=manifest["mode"],
        mlp_width=manifest["mlp_width"] if manifest["mode"] == "ada" else 16,
        cg=dc.CgConfig(max_iters=manifest["cg"]["max_iters"], tol=manifest["cg"]["tol"]),
        init_lam=manifest["init_lam"],
    )


def load_checkpoint(
    path,
    expect_cfg: Optional[unrolled.UnrollConfig] = None,
) -> Tuple[unrolled.ReconModel, Optional[dict], dict]:
    """Rebuild a model (and optimizer state, if saved) from a checkpoint.

    Returns ``(model, opt_state, manifest)`` where opt_state is None or a
    dict with keys t / m / v suitable for ``Adam.load_state``.
    """
    path = pathlib.Path(path)
    manifest = read_manifest(path)
    cfg = config_from_manifest(manifest)
    if expect_cfg is not None and dataclasses.asdict(expect_cfg) != dataclasses.asdict(cfg):
        raise CompatibilityError(
            f"checkpoint architecture {dataclasses.asdict(cfg)} does not match expected {dataclasses.asdict(expect_cfg)}"
        )

    tensors = _read_tensors(path, manifest)
    model = unrolled.ReconModel(cfg, seed=0, dtype=_DTYPE_TAGS[manifest["dtype"]])
    params = model.parameters()

    missing = [k for k in params if k not in tensors]
    if missing:
        raise CompatibilityError(f"checkpoint missing parameters: {missing}")
    staged = {}
    for name, tensor in params.items():
        arr = tensors[name]
        if tuple(arr.shape) != tensor.data.shape:
            raise CompatibilityError(
                f"parameter {name!r}: checkpoint shape {arr.shape} != model shape {tensor.data.shape}"
            )
        staged[name] = arr.astype(tensor.data.dtype, copy=False)
    for name, tensor in params.items():
        tensor.data = staged[name].copy()

    opt_state = None
    if manifest.get("optimizer") is not None:
        m = {k: tensors[f"opt.m.{k}"] for k in params if f"opt.m.{k}" in tensors}
        v = {k: tensors[f"opt.v.{k}"] for k in params if f"opt.v.{k}" in tensors}
        if set(m) != set(params) or set(v) != set(params):
            raise CompatibilityError("checkpoint optimizer state incomplete")
        opt_state = {"t": manifest["optimizer"]["t"], "m": m, "v": v}
    return model, opt_state, manifest
