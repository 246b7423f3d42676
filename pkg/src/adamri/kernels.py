"""Convolution kernels: numba-jitted inner loops with a pure-numpy fallback.

The 3x3 same-padding convolutions are the hot path of training (they run
once per CNN layer per unroll step, forward and backward). By default the
numba implementations are used; setting the environment variable
``ADAMRI_NO_NUMBA=1`` before import selects the numpy (im2col) path
instead. ``benchmarks/bench_conv.py`` compares the two.

Both paths are deterministic for fixed inputs; they differ only in
floating-point summation order.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_ENV_FLAG = "ADAMRI_NO_NUMBA"

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


USE_NUMBA = _HAVE_NUMBA and os.environ.get(_ENV_FLAG, "").lower() not in (
    "1",
    "true",
    "yes",
)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def _pad1(x):
    return np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))


# ---------------------------------------------------------------------------
# numpy (im2col) path
# ---------------------------------------------------------------------------


def conv2d_forward_numpy(x, w, b):
    win = sliding_window_view(_pad1(x), (3, 3), axis=(2, 3))
    out = np.einsum("nchwkl,ockl->nohw", win, w, optimize=True)
    out += b[None, :, None, None]
    return out


def conv2d_grad_input_numpy(g, w):
    win = sliding_window_view(_pad1(g), (3, 3), axis=(2, 3))
    # transposed convolution = correlation with the 180-degree-rotated,
    # channel-swapped kernel
    return np.einsum("nohwkl,ockl->nchw", win, w[:, :, ::-1, ::-1], optimize=True)


def conv2d_grad_weight_numpy(g, x):
    win = sliding_window_view(_pad1(x), (3, 3), axis=(2, 3))
    return np.einsum("nohw,nchwkl->ockl", g, win, optimize=True)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _corr3x3(xp, w, b, out):
    # xp: [N, Ci, H+2, W+2] padded input, out: [N, Co, H, W] (overwritten)
    N, Co, H, W = out.shape
    Ci = xp.shape[1]
    for n in range(N):
        for o in range(Co):
            acc = out[n, o]
            for i in range(H):
                for j in range(W):
                    acc[i, j] = b[o]
            for c in range(Ci):
                for ky in range(3):
                    for kx in range(3):
                        wv = w[o, c, ky, kx]
                        for i in range(H):
                            xrow = xp[n, c, i + ky]
                            orow = acc[i]
                            for j in range(W):
                                orow[j] += wv * xrow[j + kx]


@njit(cache=True)
def _grad_weight3x3(g, xp, gw):
    # g: [N, Co, H, W], xp: [N, Ci, H+2, W+2], gw: [Co, Ci, 3, 3] (overwritten)
    N, Co, H, W = g.shape
    Ci = xp.shape[1]
    for o in range(Co):
        for c in range(Ci):
            for ky in range(3):
                for kx in range(3):
                    s = 0.0
                    for n in range(N):
                        for i in range(H):
                            grow = g[n, o, i]
                            xrow = xp[n, c, i + ky]
                            for j in range(W):
                                s += grow[j] * xrow[j + kx]
                    gw[o, c, ky, kx] = s


def conv2d_forward_numba(x, w, b):
    out = np.empty_like(x, shape=(x.shape[0], w.shape[0], x.shape[2], x.shape[3]))
    _corr3x3(_pad1(x), w, b, out)
    return out


def conv2d_grad_input_numba(g, w):
    # same correlation with flipped kernel and swapped in/out channels
    wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    out = np.empty_like(g, shape=(g.shape[0], w.shape[1], g.shape[2], g.shape[3]))
    _corr3x3(_pad1(g), wt, np.zeros(w.shape[1], g.dtype), out)
    return out


def conv2d_grad_weight_numba(g, x):
    gw = np.empty_like(x, shape=(g.shape[1], x.shape[1], 3, 3))
    _grad_weight3x3(np.ascontiguousarray(g), _pad1(x), gw)
    return gw


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    conv2d_forward = conv2d_forward_numba
    conv2d_grad_input = conv2d_grad_input_numba
    conv2d_grad_weight = conv2d_grad_weight_numba
else:
    conv2d_forward = conv2d_forward_numpy
    conv2d_grad_input = conv2d_grad_input_numpy
    conv2d_grad_weight = conv2d_grad_weight_numpy
