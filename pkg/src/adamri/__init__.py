"""Condition-adaptive unrolled reconstruction for undersampled parallel MRI.

A small residual CNN denoiser alternates with a conjugate-gradient
data-consistency solve, unrolled for a fixed number of steps and trained
end to end. A compact fully connected network reads a five-entry
acquisition-condition vector (contrast, field strength, acceleration) and
modulates the denoiser's feature channels and the data-consistency weight,
so one set of weights serves every acquisition setting.
"""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .conditioning import (
    CONDITION_DIM,
    FilmParams,
    MlpParams,
    count_mlp_params,
    encode_condition,
    decode_condition,
    init_mlp,
    mlp_forward,
    parse_setting,
    setting_name,
)
from .dataset import DatasetSpec, Sample, generate_dataset, load_manifest, load_sample, load_split
from .dc import CgConfig, cg_solve, dc_block, dc_solve
from .denoiser import CnnParams, count_cnn_params, denoise, init_cnn
from .errors import (
    CompatibilityError,
    ContractError,
    DimensionError,
    NumericError,
    UndefinedTestError,
)
from .evaluate import aggregate, compare_models, evaluate_samples, lambda_curve, write_report
from .metrics import WilcoxonResult, psnr, ssim, wilcoxon_signed_rank
from .mri import (
    AcquisitionSetup,
    CoilMaps,
    KSpace,
    PhantomSpec,
    SamplingMask,
    adjoint_A,
    forward_A,
    make_coils,
    make_mask,
    make_phantom,
    noise_sigma_for_field,
    normal_op,
    simulate_acquisition,
)
from .optim import Adam
from .training import TrainConfig, TrainResult, train_model
from .unrolled import ReconModel, UnrollConfig, loss_mse

__all__ = [name for name in dir() if not name.startswith("_")]
