"""Residual convolutional denoiser with per-channel feature modulation.

Five 3x3 same-padding convolutions operate on the two-channel (real,
imaginary) image. After each of the first four, the feature maps are
multiplied channelwise by the scales predicted from the acquisition
condition, then passed through ReLU. The final convolution maps back to
two channels and is left unmodulated. The network predicts the noise
component, so the denoised image is ``input - prediction``; with all-zero
weights the block is exactly the identity.
"""

import dataclasses
from typing import List, Tuple

import numpy as np

from . import autodiff
from .conditioning import FilmParams
from .errors import ContractError

NUM_CONV_LAYERS = 5
IMAGE_CHANNELS = 2


@dataclasses.dataclass
class CnnParams:
    convs: List[Tuple[autodiff.Tensor, autodiff.Tensor]]  # (weight [out,in,3,3], bias [out])
    num_channels: int

    def tensors(self):
        out = {}
        for i, (w, b) in enumerate(self.convs):
            out[f"cnn.w{i}"] = w
            out[f"cnn.b{i}"] = b
        return out


def conv_layer_dims(num_channels: int) -> List[Tuple[int, int]]:
    dims = [(IMAGE_CHANNELS, num_channels)]
    dims += [(num_channels, num_channels)] * (NUM_CONV_LAYERS - 2)
    dims += [(num_channels, IMAGE_CHANNELS)]
    return dims


def count_cnn_params(num_channels: int) -> int:
    return sum(i * o * 9 + o for i, o in conv_layer_dims(num_channels))


def init_cnn(num_channels: int, seed: int = 0, dtype=np.float32) -> CnnParams:
    """He-uniform hidden weights, zero biases, zero final layer.

    Zeroing the last convolution makes the residual block start as the exact
    identity, so the data-consistency weight sees no pressure from an
    untrained noise predictor during the first epochs; the final layer
    itself picks up nonzero weights after one optimizer step and unblocks
    the layers below it.
    """
    if num_channels < 1:
        raise ContractError("num_channels must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([0x9A0C, seed]))
    dims = conv_layer_dims(num_channels)
    convs = []
    for i, (fan_in, fan_out) in enumerate(dims):
        if i == len(dims) - 1:
            w = np.zeros((fan_out, fan_in, 3, 3))
        else:
            bound = np.sqrt(6.0 / (fan_in * 9))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in, 3, 3))
        b = np.zeros(fan_out)
        convs.append(
            (
                autodiff.Tensor(w.astype(dtype), requires_grad=True),
                autodiff.Tensor(b.astype(dtype), requires_grad=True),
            )
        )
    return CnnParams(convs=convs, num_channels=num_channels)


def denoise(
    x: autodiff.Tensor,
    params: CnnParams,
    film: FilmParams,
    return_activations: bool = False,
):
    """Apply the modulated residual denoiser to a [N, 2, H, W] tensor."""
    if x.data.ndim != 4 or x.data.shape[1] != IMAGE_CHANNELS:
        raise ContractError(f"denoise expects [N, {IMAGE_CHANNELS}, H, W], got {x.data.shape}")
    if film.num_channels != params.num_channels:
        raise ContractError(
            f"modulation width {film.num_channels} != denoiser width {params.num_channels}"
        )
    activations = []
    h = x
    for i, (w, b) in enumerate(params.convs):
        h = autodiff.conv2d(h, w, b)
        if i < NUM_CONV_LAYERS - 1:
            h = autodiff.channel_scale(h, film.layer_scale(i))
            h = autodiff.relu(h)
        if return_activations:
            activations.append(h)
    out = x - h
    if return_activations:
        return out, activations
    return out
