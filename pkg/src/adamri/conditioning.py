"""Acquisition-condition encoding and the modulation network.

A scan setting is summarized by a five-entry vector: a one-hot contrast
code (T1, T2, FLAIR), a field-strength bit (1 for 3T, 0 for 1.5T), and the
nominal acceleration factor as a raw float. A small fully connected
network maps this vector to per-channel feature scales for the denoiser's
four hidden convolution layers plus the data-consistency weight lam.

The output head starts at the identity: its weights are zero and its bias
is one for every scale entry, so an untrained network applies no feature
modulation. lam passes through softplus (plus a small floor) to stay
positive for the CG solve.
"""

import dataclasses
from typing import List, Tuple

import numpy as np

from . import autodiff
from .errors import ContractError
from .mri import CONTRASTS, FIELD_STRENGTHS

CONDITION_DIM = 5
LAM_FLOOR = 1e-4
_FIELD_LABEL = {1.5: "1.5T", 3.0: "3T"}
_LABEL_FIELD = {v: k for k, v in _FIELD_LABEL.items()}


def encode_condition(contrast: str, field_strength: float, acceleration: float) -> np.ndarray:
    """Five-entry condition vector [T1, T2, FLAIR, is-3T, acceleration]."""
    if contrast not in CONTRASTS:
        raise ContractError(f"unknown contrast {contrast!r}, expected one of {CONTRASTS}")
    if field_strength not in FIELD_STRENGTHS:
        raise ContractError(f"unknown field strength {field_strength}, expected one of {FIELD_STRENGTHS}")
    if not acceleration >= 1.0:
        raise ContractError(f"acceleration must be >= 1, got {acceleration}")
    vec = np.zeros(CONDITION_DIM, dtype=np.float64)
    vec[CONTRASTS.index(contrast)] = 1.0
    vec[3] = 1.0 if field_strength == 3.0 else 0.0
    vec[4] = float(acceleration)
    return vec


def decode_condition(vec: np.ndarray) -> Tuple[str, float, float]:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (CONDITION_DIM,):
        raise ContractError(f"condition vector must have shape ({CONDITION_DIM},), got {vec.shape}")
    onehot = vec[:3]
    if not ((onehot == 1.0).sum() == 1 and ((onehot == 0.0) | (onehot == 1.0)).all()):
        raise ContractError(f"invalid contrast one-hot {onehot}")
    contrast = CONTRASTS[int(np.argmax(onehot))]
    field = 3.0 if vec[3] == 1.0 else 1.5
    return contrast, field, float(vec[4])


def setting_name(contrast: str, field_strength: float) -> str:
    return f"{contrast}-{_FIELD_LABEL[field_strength]}"


def parse_setting(name: str) -> Tuple[str, float]:
    try:
        contrast, field_label = name.split("-")
        return contrast, _LABEL_FIELD[field_label]
    except (ValueError, KeyError):
        raise ContractError(
            f"bad setting {name!r}; expected e.g. 'T2-3T' with contrast in {CONTRASTS} and field in (1.5T, 3T)"
        ) from None


# ---------------------------------------------------------------------------
# modulation network
# ---------------------------------------------------------------------------

_NUM_HIDDEN = 4  # dense layers before the output head (first maps 5 -> width)


@dataclasses.dataclass
class MlpParams:
    """Weights of the modulation network, all autodiff tensors."""

    weights: List[autodiff.Tensor]  # per layer, shape [out, in]
    biases: List[autodiff.Tensor]  # per layer, shape [out]
    width: int
    num_channels: int

    def tensors(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"mlp.w{i}"] = w
            out[f"mlp.b{i}"] = b
        return out


@dataclasses.dataclass
class FilmParams:
    """Per-layer channel scales plus the data-consistency weight."""

    scales: autodiff.Tensor  # [4 * num_channels]
    lam: autodiff.Tensor  # 0-dim, > 0
    num_channels: int

    def layer_scale(self, layer: int) -> autodiff.Tensor:
        if not 0 <= layer < 4:
            raise ContractError(f"modulated layer index must be 0..3, got {layer}")
        return autodiff.narrow(self.scales, 0, layer * self.num_channels, self.num_channels)


def mlp_layer_dims(width: int, num_channels: int) -> List[Tuple[int, int]]:
    dims = [(CONDITION_DIM, width)]
    dims += [(width, width)] * (_NUM_HIDDEN - 1)
    dims += [(width, 4 * num_channels + 1)]
    return dims


def count_mlp_params(width: int, num_channels: int) -> int:
    return sum(i * o + o for i, o in mlp_layer_dims(width, num_channels))


def init_mlp(
    width: int,
    num_channels: int,
    seed: int = 0,
    dtype=np.float32,
    init_lam: float = 1.0,
) -> MlpParams:
    """He-uniform hidden layers; zero-weight identity output head."""
    if width < 1 or num_channels < 1:
        raise ContractError("width and num_channels must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([0x9A0B, seed]))
    weights, biases = [], []
    dims = mlp_layer_dims(width, num_channels)
    for li, (fan_in, fan_out) in enumerate(dims):
        if li < len(dims) - 1:
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = np.zeros(fan_out)
        else:
            w = np.zeros((fan_out, fan_in))
            b = np.ones(fan_out)
            b[-1] = inverse_softplus(init_lam - LAM_FLOOR)
        weights.append(autodiff.Tensor(w.astype(dtype), requires_grad=True))
        biases.append(autodiff.Tensor(b.astype(dtype), requires_grad=True))
    return MlpParams(weights=weights, biases=biases, width=width, num_channels=num_channels)


def inverse_softplus(y: float) -> float:
    if y <= 0:
        raise ContractError(f"softplus inverse needs y > 0, got {y}")
    # log(exp(y) - 1), stable for large y
    return float(y + np.log1p(-np.exp(-y)))


def mlp_forward(params: MlpParams, condition: np.ndarray) -> FilmParams:
    """Map a condition vector to feature scales and a positive lam."""
    condition = np.asarray(condition, dtype=np.float64)
    if condition.shape != (CONDITION_DIM,):
        raise ContractError(f"condition vector must have shape ({CONDITION_DIM},), got {condition.shape}")
    dtype = params.weights[0].data.dtype
    h = autodiff.Tensor(condition[None].astype(dtype))
    n_layers = len(params.weights)
    for i in range(n_layers):
        h = autodiff.dense(h, params.weights[i], params.biases[i])
        if i < n_layers - 1:
            h = autodiff.relu(h)
    flat = autodiff.reshape(h, (4 * params.num_channels + 1,))
    scales = autodiff.narrow(flat, 0, 0, 4 * params.num_channels)
    lam_raw = autodiff.reshape(autodiff.narrow(flat, 0, 4 * params.num_channels, 1), ())
    lam = autodiff.softplus(lam_raw) + LAM_FLOOR
    return FilmParams(scales=scales, lam=lam, num_channels=params.num_channels)


def identity_film(num_channels: int, lam: autodiff.Tensor, dtype=np.float32) -> FilmParams:
    """Unit scales with an externally supplied lam (plain, unconditioned model)."""
    ones = autodiff.Tensor(np.ones(4 * num_channels, dtype=dtype))
    return FilmParams(scales=ones, lam=lam, num_channels=num_channels)
