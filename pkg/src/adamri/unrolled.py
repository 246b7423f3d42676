"""Unrolled reconstruction model: alternating denoising and data consistency.

Starting from the zero-filled adjoint image x0 = A^H b, each of the K
steps denoises the current image and then solves the data-consistency
problem with weight lam:

    z_k     = D(x_k; theta, s(m))
    x_{k+1} = (A^H A + lam(m) I)^{-1} (A^H b + lam(m) z_k)

The denoiser weights theta are shared across steps. In the adaptive mode,
the channel scales s(m) and lam(m) come from the modulation network
applied to the acquisition-condition vector m; in the plain mode the
scales are fixed at one and lam is a single trainable scalar.
"""

import dataclasses
from typing import Dict, Optional

import numpy as np

from . import autodiff, conditioning, dc, denoiser, mri
from .errors import ContractError

MODES = ("ada", "plain")


@dataclasses.dataclass(frozen=True)
class UnrollConfig:
    num_steps: int
    num_channels: int
    mode: str = "ada"
    mlp_width: int = 16
    cg: dc.CgConfig = dc.CgConfig()
    init_lam: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.num_steps < 1:
            raise ContractError(f"num_steps must be >= 1, got {self.num_steps}")


class ReconModel:
    """Bundles the denoiser with either a modulation network or a scalar lam."""

    def __init__(self, cfg: UnrollConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.cnn = denoiser.init_cnn(cfg.num_channels, seed=seed, dtype=dtype)
        self.mlp: Optional[conditioning.MlpParams] = None
        self.raw_lam: Optional[autodiff.Tensor] = None
        if cfg.mode == "ada":
            self.mlp = conditioning.init_mlp(
                cfg.mlp_width, cfg.num_channels, seed=seed, dtype=dtype, init_lam=cfg.init_lam
            )
        else:
            raw = conditioning.inverse_softplus(cfg.init_lam - conditioning.LAM_FLOOR)
            self.raw_lam = autodiff.Tensor(np.asarray(raw, dtype=dtype), requires_grad=True)

    def parameters(self) -> Dict[str, autodiff.Tensor]:
        params = dict(self.cnn.tensors())
        if self.mlp is not None:
            params.update(self.mlp.tensors())
        if self.raw_lam is not None:
            params["raw_lam"] = self.raw_lam
        return params

    def num_params(self) -> int:
        return sum(t.data.size for t in self.parameters().values())

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def film_for(self, condition: Optional[np.ndarray]) -> conditioning.FilmParams:
        if self.cfg.mode == "ada":
            if condition is None:
                raise ContractError("adaptive mode requires a condition vector")
            return conditioning.mlp_forward(self.mlp, condition)
        lam = autodiff.softplus(self.raw_lam) + conditioning.LAM_FLOOR
        return conditioning.identity_film(self.cfg.num_channels, lam, dtype=self.dtype)

    def reconstruct(
        self,
        atb: np.ndarray,
        setup: mri.AcquisitionSetup,
        condition: Optional[np.ndarray] = None,
        num_steps: Optional[int] = None,
    ) -> autodiff.Tensor:
        """Run the unrolled iteration; returns a [1, 2, H, W] tensor."""
        steps = self.cfg.num_steps if num_steps is None else num_steps
        if steps < 1:
            raise ContractError(f"num_steps must be >= 1, got {steps}")
        film = self.film_for(condition)
        x = autodiff.Tensor(
            dc.complex_to_channels(atb)[None].astype(self.dtype, copy=False)
        )
        for _ in range(steps):
            z = denoiser.denoise(x, self.cnn, film)
            x = dc.dc_block(z, film.lam, atb, setup, self.cfg.cg)
        return x

    def current_lam(self, condition: Optional[np.ndarray] = None) -> float:
        """The data-consistency weight the model would use, without a graph."""
        with autodiff.no_grad():
            return float(self.film_for(condition).lam.data)


def pin_mlp_to_constant(model: ReconModel, raw_lam_value: float):
    """Zero the modulation network so it outputs unit scales and a fixed lam.

    After pinning, the adaptive model computes exactly what a plain model
    with ``raw_lam = raw_lam_value`` computes, for every condition vector.
    """
    if model.mlp is None:
        raise ContractError("pin_mlp_to_constant needs an adaptive-mode model")
    for w in model.mlp.weights:
        w.data[...] = 0.0
    for b in model.mlp.biases[:-1]:
        b.data[...] = 0.0
    out_bias = model.mlp.biases[-1]
    out_bias.data[...] = 1.0
    out_bias.data[-1] = raw_lam_value


def loss_mse(pred: autodiff.Tensor, target: np.ndarray) -> autodiff.Tensor:
    """Mean squared error over all real/imaginary pixel components."""
    if np.iscomplexobj(target):
        target = dc.complex_to_channels(target)[None]
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise ContractError(f"target shape {target.shape} != prediction shape {pred.data.shape}")
    diff = pred - autodiff.Tensor(target)
    return autodiff.tmean(diff * diff)
