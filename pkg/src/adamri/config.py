"""Run configuration: JSON in, validated dataclasses out.

Unknown keys anywhere in the document are rejected rather than ignored, so
a typo like "epochs_stage_1" fails loudly instead of silently training
with defaults. Two presets ship with the package: ``desk-small`` (minutes
on a laptop core) and ``paper-shape`` (full-size architecture).
"""

import dataclasses
import hashlib
import importlib.resources
import json
import pathlib
from typing import Optional

from . import dc, dataset, training, unrolled
from .errors import ContractError

PRESETS = ("desk-small", "paper-shape")


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    num_steps: int = 5
    num_channels: int = 16
    mlp_width: int = 16
    cg_max_iters: int = 10
    cg_tol: float = 1e-6
    init_lam: float = 1.0

    def unroll_config(self, mode: str) -> unrolled.UnrollConfig:
        return unrolled.UnrollConfig(
            num_steps=self.num_steps,
            num_channels=self.num_channels,
            mode=mode,
            mlp_width=self.mlp_width,
            cg=dc.CgConfig(max_iters=self.cg_max_iters, tol=self.cg_tol),
            init_lam=self.init_lam,
        )


@dataclasses.dataclass(frozen=True)
class RunConfig:
    data: dataset.DatasetSpec
    model: ModelConfig
    train: training.TrainConfig
    data_root: str = "data"
    out_dir: str = "runs/default"


_SECTION_TYPES = {
    "data": dataset.DatasetSpec,
    "model": ModelConfig,
    "train": training.TrainConfig,
}
_TOP_SCALARS = {"data_root", "out_dir"}


def _build_section(cls, payload: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(payload) - set(fields)
    if unknown:
        raise ContractError(f"unknown key(s) {sorted(unknown)} in config section {where!r}")
    kwargs = {}
    for name, value in payload.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ContractError("config document must be a JSON object")
    unknown = set(doc) - set(_SECTION_TYPES) - _TOP_SCALARS
    if unknown:
        raise ContractError(f"unknown top-level config key(s) {sorted(unknown)}")
    sections = {}
    for name, cls in _SECTION_TYPES.items():
        payload = doc.get(name, {})
        if not isinstance(payload, dict):
            raise ContractError(f"config section {name!r} must be an object")
        sections[name] = _build_section(cls, payload, name)
    return RunConfig(
        data=sections["data"],
        model=sections["model"],
        train=sections["train"],
        data_root=str(doc.get("data_root", "data")),
        out_dir=str(doc.get("out_dir", "runs/default")),
    )


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "data": dataclasses.asdict(cfg.data),
        "model": dataclasses.asdict(cfg.model),
        "train": dataclasses.asdict(cfg.train),
        "data_root": cfg.data_root,
        "out_dir": cfg.out_dir,
    }


def canonical_json(cfg: RunConfig) -> str:
    def default(o):
        if isinstance(o, tuple):
            return list(o)
        raise TypeError(type(o))

    return json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"), default=default)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def load_config(path: Optional[str] = None, preset: Optional[str] = None) -> RunConfig:
    """Load from a JSON file or a named packaged preset (exactly one)."""
    if (path is None) == (preset is None):
        raise ContractError("provide exactly one of a config path or a preset name")
    if preset is not None:
        if preset not in PRESETS:
            raise ContractError(f"unknown preset {preset!r}; available: {PRESETS}")
        text = (
            importlib.resources.files("adamri").joinpath(f"configs/{preset}.json").read_text()
        )
    else:
        p = pathlib.Path(path)
        if not p.exists():
            raise ContractError(f"config file {p} does not exist")
        text = p.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ContractError(f"config is not valid JSON: {e}") from None
    return config_from_dict(doc)
