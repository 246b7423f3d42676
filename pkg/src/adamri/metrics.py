"""Reconstruction quality metrics and a paired significance test.

PSNR comes in two flavors: ``normalized`` uses the root-mean-square error
(the value reported everywhere in this package), while ``literal`` divides
the squared peak by the *sum* of squared errors; the two differ by exactly
10*log10(num_pixels).

SSIM uses the standard 11x11 Gaussian window (sigma 1.5) on magnitude
images, evaluated on fully valid windows only.

The Wilcoxon signed-rank test is implemented here rather than taken from
scipy because scipy's exact mode refuses midranks (tied differences); the
doubled-rank dynamic program below enumerates the exact permutation
distribution with ties, and large samples fall back to the usual normal
approximation with tie and continuity corrections.
"""

import dataclasses
import math
from typing import Sequence

import numpy as np
import scipy.ndimage
import scipy.stats

from .errors import DimensionError, UndefinedTestError

PSNR_MODES = ("normalized", "literal")


def _as_pair(gt, pred):
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise DimensionError(f"shape mismatch: {gt.shape} vs {pred.shape}")
    return gt, pred


def psnr(gt: np.ndarray, pred: np.ndarray, mode: str = "normalized") -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    if mode not in PSNR_MODES:
        raise DimensionError(f"psnr mode must be one of {PSNR_MODES}, got {mode!r}")
    gt, pred = _as_pair(gt, pred)
    peak = float(np.abs(gt).max())
    err2 = np.abs(gt - pred) ** 2
    denom = float(err2.mean()) if mode == "normalized" else float(err2.sum())
    if denom == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak**2 / denom))


_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def _gaussian_window() -> np.ndarray:
    half = _SSIM_WINDOW // 2
    g = np.exp(-np.arange(-half, half + 1) ** 2 / (2.0 * _SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(gt: np.ndarray, pred: np.ndarray, data_range: float = None) -> float:
    """Mean structural similarity over fully valid 11x11 windows.

    Complex inputs are compared by magnitude. ``data_range`` defaults to the
    peak magnitude of the reference image.
    """
    gt, pred = _as_pair(gt, pred)
    if np.iscomplexobj(gt) or np.iscomplexobj(pred):
        gt, pred = np.abs(gt), np.abs(pred)
    gt = gt.astype(np.float64)
    pred = pred.astype(np.float64)
    if gt.ndim != 2 or min(gt.shape) < _SSIM_WINDOW:
        raise DimensionError(f"ssim needs a 2-D image at least {_SSIM_WINDOW} pixels on a side")
    if data_range is None:
        data_range = float(gt.max())
    if data_range <= 0:
        raise UndefinedTestError("ssim undefined for a zero reference image")

    win = _gaussian_window()
    half = _SSIM_WINDOW // 2

    def valid(img):
        full = scipy.ndimage.correlate(img, win, mode="constant")
        return full[half:-half, half:-half]

    mu1, mu2 = valid(gt), valid(pred)
    s11 = valid(gt * gt) - mu1 * mu1
    s22 = valid(pred * pred) - mu2 * mu2
    s12 = valid(gt * pred) - mu1 * mu2

    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float((num / den).mean())


# ---------------------------------------------------------------------------
# Wilcoxon signed-rank test
# ---------------------------------------------------------------------------

EXACT_LIMIT = 25


@dataclasses.dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+, sum of ranks of positive differences
    n: int  # pairs remaining after zero differences are dropped
    p_value: float
    method: str  # "exact" or "normal"


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> WilcoxonResult:
    """Two-sided paired test of median difference, exact for n <= 25."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"paired 1-D samples required, got {x.shape} and {y.shape}")
    d = x - y
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        raise UndefinedTestError("all paired differences are zero; test statistic undefined")

    ranks = scipy.stats.rankdata(np.abs(d))  # midranks on ties
    w_plus = float(ranks[d > 0].sum())

    if n <= EXACT_LIMIT:
        p = _exact_two_sided_p(ranks, w_plus)
        method = "exact"
    else:
        mu = n * (n + 1) / 4.0
        tie_counts = np.unique(ranks, return_counts=True)[1]
        var = n * (n + 1) * (2 * n + 1) / 24.0 - ((tie_counts**3 - tie_counts).sum()) / 48.0
        if var <= 0:
            raise UndefinedTestError("zero variance in signed-rank statistic")
        # continuity correction toward the mean
        z = (w_plus - mu - 0.5 * np.sign(w_plus - mu)) / math.sqrt(var)
        p = float(math.erfc(abs(z) / math.sqrt(2.0)))
        method = "normal"
    return WilcoxonResult(statistic=w_plus, n=n, p_value=min(1.0, p), method=method)


def _exact_two_sided_p(ranks: np.ndarray, w_plus: float) -> float:
    """Exact two-sided p via the sign-flip distribution of W+.

    Doubling the (mid)ranks makes them integers, so the distribution of
    2*W+ over all 2^n sign assignments is a polynomial product that a small
    dynamic program evaluates exactly, ties included.
    """
    doubled = np.rint(2.0 * ranks).astype(np.int64)
    total = int(doubled.sum())
    dist = np.zeros(total + 1, dtype=np.float64)
    dist[0] = 1.0
    top = 0
    for r in doubled:
        nxt = dist.copy()
        nxt[r : top + r + 1] += dist[: top + 1]
        dist = nxt
        top += r
    dist /= dist.sum()

    w2 = int(round(2.0 * w_plus))
    p_low = dist[: w2 + 1].sum()
    p_high = dist[w2:].sum()
    return float(2.0 * min(p_low, p_high))
