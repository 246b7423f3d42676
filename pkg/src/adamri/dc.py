"""Data-consistency solve and its implicit gradient.

Each reconstruction step solves the regularized least-squares problem

    x = argmin_x ||A x - b||^2 + lam * ||x - z||^2
      = (A^H A + lam I)^{-1} (A^H b + lam z)

with conjugate gradients on the (Hermitian, positive definite for lam > 0)
normal operator. Gradients with respect to z and lam come from implicit
differentiation of the optimality condition: with u = (A^H A + lam I)^{-1} g,

    dL/dz   = lam * u
    dL/dlam = Re <u, z - x>.

The same CG routine performs the backward solve, so no unrolled graph of
the solver iterations is ever built.
"""

import dataclasses
from typing import Callable, Optional

import numpy as np

from . import autodiff, mri
from .errors import ContractError, DimensionError, NumericError


@dataclasses.dataclass(frozen=True)
class CgConfig:
    max_iters: int = 10
    tol: float = 1e-6  # relative residual stopping threshold


def _vdot_real(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b).real)


def cg_solve(
    apply_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    x0: Optional[np.ndarray] = None,
    cfg: CgConfig = CgConfig(),
    record_history: bool = False,
):
    """Conjugate gradients for a Hermitian positive-definite operator.

    Returns ``(x, info)`` where info carries the iteration count, the final
    relative residual, and (optionally) the residual-norm history.
    """
    x = np.zeros_like(rhs) if x0 is None else x0.astype(rhs.dtype, copy=True)
    r = rhs - apply_op(x)
    p = r.copy()
    rs = _vdot_real(r, r)
    rhs_norm = float(np.linalg.norm(rhs))
    stop = (cfg.tol * rhs_norm) ** 2
    history = [np.sqrt(rs)]

    iters = 0
    for iters in range(cfg.max_iters):
        if rs <= stop:
            break
        op_p = apply_op(p)
        denom = _vdot_real(p, op_p)
        if denom <= 0 or not np.isfinite(denom):
            raise NumericError(f"CG curvature {denom} is not positive; operator not positive definite?")
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * op_p
        rs_new = _vdot_real(r, r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        if record_history:
            history.append(np.sqrt(rs))
    else:
        iters = cfg.max_iters

    if not np.isfinite(x).all():
        raise NumericError("CG produced non-finite values")
    info = {
        "iters": iters,
        "rel_residual": np.sqrt(rs) / rhs_norm if rhs_norm > 0 else 0.0,
    }
    if record_history:
        info["residual_history"] = history
    return x, info


def dc_solve(
    atb: np.ndarray,
    z: np.ndarray,
    lam: float,
    setup: mri.AcquisitionSetup,
    cfg: CgConfig = CgConfig(),
    x0: Optional[np.ndarray] = None,
):
    """Solve (A^H A + lam I) x = atb + lam z; warm-started at z by default."""
    if lam <= 0:
        raise ContractError(f"data-consistency weight lam must be > 0, got {lam}")
    if atb.shape != z.shape:
        raise DimensionError(f"atb shape {atb.shape} != z shape {z.shape}")

    def op(v):
        return mri.normal_op(v, setup) + lam * v

    rhs = atb + lam * z
    return cg_solve(op, rhs, x0=z if x0 is None else x0, cfg=cfg)


# ---------------------------------------------------------------------------
# autodiff node
# ---------------------------------------------------------------------------


def complex_to_channels(x: np.ndarray) -> np.ndarray:
    """[H, W] complex -> [2, H, W] real (channel 0 real part, 1 imaginary)."""
    return np.stack([x.real, x.imag]).astype(
        np.float32 if x.dtype == np.complex64 else np.float64
    )


def channels_to_complex(t: np.ndarray) -> np.ndarray:
    """[2, H, W] real -> [H, W] complex."""
    if t.ndim != 3 or t.shape[0] != 2:
        raise DimensionError(f"expected [2, H, W], got {t.shape}")
    cdtype = np.complex64 if t.dtype == np.float32 else np.complex128
    return (t[0] + 1j * t[1]).astype(cdtype)


def dc_block(
    z: autodiff.Tensor,
    lam: autodiff.Tensor,
    atb: np.ndarray,
    setup: mri.AcquisitionSetup,
    cfg: CgConfig = CgConfig(),
) -> autodiff.Tensor:
    """Differentiable data-consistency step on a [1, 2, H, W] tensor.

    ``atb`` (the adjoint of the measured data) is a fixed complex array, not
    a graph input. The backward pass runs a second CG solve with the same
    operator and config.
    """
    if z.data.ndim != 4 or z.data.shape[0] != 1 or z.data.shape[1] != 2:
        raise ContractError(f"dc_block expects a [1, 2, H, W] tensor, got {z.data.shape}")
    if lam.data.shape != ():
        raise ContractError(f"dc_block expects a scalar lam tensor, got shape {lam.data.shape}")

    saved = {}

    def _forward(z_arr, lam_arr):
        lam_val = float(lam_arr)
        z_c = channels_to_complex(z_arr[0])
        x_c, _ = dc_solve(atb.astype(z_c.dtype, copy=False), z_c, lam_val, setup, cfg)
        saved["z_c"] = z_c
        saved["x_c"] = x_c
        saved["lam"] = lam_val
        return complex_to_channels(x_c)[None]

    def _backward(g):
        g_c = channels_to_complex(np.ascontiguousarray(g[0]))
        lam_val = saved["lam"]

        def op(v):
            return mri.normal_op(v, setup) + lam_val * v

        u, _ = cg_solve(op, g_c, cfg=cfg)
        grad_z = complex_to_channels(lam_val * u)[None]
        grad_lam = np.asarray(
            _vdot_real(u, saved["z_c"] - saved["x_c"]), dtype=lam.data.dtype
        )
        return [grad_z.astype(z.data.dtype, copy=False), grad_lam]

    return autodiff.custom_op([z, lam], _forward, _backward, name="dc_block")
