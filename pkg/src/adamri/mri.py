"""Synthetic parallel-MRI data generation and the measurement operator.

The measurement operator multiplies an image pointwise by each coil
sensitivity map, applies a centered orthonormal 2-D DFT, and zeroes the
phase-encode lines dropped by the sampling mask. Its adjoint reverses the
chain. All operator code works on plain complex numpy arrays (complex64
for the float32 training path, complex128 for the gradient-check path).
"""

import dataclasses

import numpy as np

from .errors import ContractError, DimensionError

CONTRASTS = ("T1", "T2", "FLAIR")
FIELD_STRENGTHS = (1.5, 3.0)

# Relative tissue magnitudes per contrast. Each table peaks at 1 so the
# phantom's peak-magnitude normalization leaves region values unchanged.
TISSUE_INTENSITY = {
    "T1": {"scalp": 1.00, "brain": 0.80, "gray": 0.62, "csf": 0.15, "lesion": 0.40},
    "T2": {"scalp": 0.30, "brain": 0.42, "gray": 0.55, "csf": 1.00, "lesion": 0.85},
    "FLAIR": {"scalp": 0.35, "brain": 0.50, "gray": 0.62, "csf": 0.08, "lesion": 1.00},
}

# (cx, cy, semi_x, semi_y, angle_deg, tissue); painted in order, later wins
_BASE_ELLIPSES = (
    (0.00, 0.00, 0.72, 0.95, 0.0, "scalp"),
    (0.00, 0.00, 0.64, 0.86, 0.0, "brain"),
    (0.00, 0.14, 0.34, 0.44, 0.0, "gray"),
    (-0.14, -0.10, 0.09, 0.24, -16.0, "csf"),
    (0.14, -0.10, 0.09, 0.24, 16.0, "csf"),
    (0.00, -0.48, 0.16, 0.12, 0.0, "gray"),
    (0.26, 0.36, 0.08, 0.08, 0.0, "lesion"),
    (-0.27, 0.30, 0.06, 0.10, 30.0, "lesion"),
)


@dataclasses.dataclass(frozen=True)
class PhantomSpec:
    contrast: str
    field_strength: float
    subject_seed: int
    height: int
    width: int


@dataclasses.dataclass
class CoilMaps:
    maps: np.ndarray  # [num_coils, H, W] complex, unit sum-of-squares per pixel

    @property
    def num_coils(self) -> int:
        return self.maps.shape[0]


@dataclasses.dataclass
class SamplingMask:
    height: int
    width: int
    kept_lines: np.ndarray  # sorted column indices
    pattern_kind: str
    acceleration: float  # requested

    @property
    def realized_acceleration(self) -> float:
        return self.width / len(self.kept_lines)

    def bool_mask(self) -> np.ndarray:
        m = np.zeros((self.height, self.width), dtype=bool)
        m[:, self.kept_lines] = True
        return m


@dataclasses.dataclass
class KSpace:
    grids: np.ndarray  # [num_coils, H, W] complex; zero off the mask
    mask: SamplingMask

    @property
    def num_coils(self) -> int:
        return self.grids.shape[0]


@dataclasses.dataclass
class AcquisitionSetup:
    coils: CoilMaps
    mask: SamplingMask


# ---------------------------------------------------------------------------
# phantom
# ---------------------------------------------------------------------------


def phantom_regions(spec: PhantomSpec) -> np.ndarray:
    """Integer label map of the phantom's tissue regions (0 = background)."""
    if spec.height < 8 or spec.width < 8:
        raise ContractError(f"phantom size must be at least 8x8, got {spec.height}x{spec.width}")
    if spec.contrast not in CONTRASTS:
        raise ContractError(f"unknown contrast {spec.contrast!r}")

    rng = np.random.default_rng(np.random.SeedSequence([0x9A07, spec.subject_seed]))
    ys = np.linspace(-1.0, 1.0, spec.height)
    xs = np.linspace(-1.0, 1.0, spec.width)
    X, Y = np.meshgrid(xs, ys)

    labels = np.zeros((spec.height, spec.width), dtype=np.int8)
    tissues = sorted(TISSUE_INTENSITY["T1"])
    for cx, cy, sa, sb, ang, tissue in _BASE_ELLIPSES:
        cx = cx + 0.03 * rng.standard_normal()
        cy = cy + 0.03 * rng.standard_normal()
        sa = sa * (1.0 + 0.08 * rng.standard_normal())
        sb = sb * (1.0 + 0.08 * rng.standard_normal())
        ang = np.deg2rad(ang + 6.0 * rng.standard_normal())
        ct, st = np.cos(ang), np.sin(ang)
        u = (X - cx) * ct + (Y - cy) * st
        v = -(X - cx) * st + (Y - cy) * ct
        inside = (u / sa) ** 2 + (v / sb) ** 2 <= 1.0
        labels[inside] = 1 + tissues.index(tissue)
    return labels


def _smooth_phase(spec: PhantomSpec) -> np.ndarray:
    # low-order polynomial phase; rng keyed off subject only, so phase (like
    # geometry) is shared across contrasts of the same subject
    rng = np.random.default_rng(np.random.SeedSequence([0x9A08, spec.subject_seed]))
    ys = np.linspace(-1.0, 1.0, spec.height)
    xs = np.linspace(-1.0, 1.0, spec.width)
    X, Y = np.meshgrid(xs, ys)
    c = rng.uniform(-1.0, 1.0, size=5)
    return 0.4 * c[0] + 1.2 * c[1] * X + 1.2 * c[2] * Y + 0.6 * c[3] * X * Y + 0.6 * c[4] * (X * X - Y * Y)


def make_phantom(spec: PhantomSpec) -> np.ndarray:
    """Piecewise-smooth complex ellipse phantom, peak magnitude 1."""
    labels = phantom_regions(spec)
    table = TISSUE_INTENSITY[spec.contrast]
    tissues = sorted(table)
    lut = np.array([0.0] + [table[t] for t in tissues])
    mag = lut[labels]
    mag /= mag.max()
    img = mag * np.exp(1j * _smooth_phase(spec))
    return img.astype(np.complex128)


# ---------------------------------------------------------------------------
# coils
# ---------------------------------------------------------------------------


def make_coils(num_coils: int, height: int, width: int) -> CoilMaps:
    """Smooth simulated sensitivity maps, normalized to unit sum-of-squares."""
    if num_coils < 1:
        raise ContractError("num_coils must be >= 1")
    ys = np.linspace(-1.0, 1.0, height)
    xs = np.linspace(-1.0, 1.0, width)
    X, Y = np.meshgrid(xs, ys)

    maps = np.empty((num_coils, height, width), dtype=np.complex128)
    for c in range(num_coils):
        ang = 2.0 * np.pi * c / num_coils
        cx, cy = 0.55 * np.cos(ang), 0.55 * np.sin(ang)
        mag = np.exp(-(((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * 0.9**2)))
        phase = 0.8 * np.cos(ang) * X + 0.8 * np.sin(ang) * Y + 0.3 * ang
        maps[c] = mag * np.exp(1j * phase)

    sos = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    maps /= sos
    return CoilMaps(maps=maps)


# ---------------------------------------------------------------------------
# sampling masks
# ---------------------------------------------------------------------------

MASK_KINDS = ("poisson_disc_1d", "uniform_random_1d")
DEFAULT_ACS_LINES = 8
_POISSON_ALPHA = 2.0  # gap growth rate away from the k-space center


def _acs_columns(width: int, acs_lines: int) -> np.ndarray:
    start = width // 2 - acs_lines // 2
    return np.arange(start, start + acs_lines)


def _poisson_accept(order, acs, center, half_width, r0, width):
    taken = np.zeros(width, dtype=bool)
    taken[acs] = True
    for c in order:
        r = r0 * (1.0 + _POISSON_ALPHA * abs(c - center) / half_width)
        m = int(np.ceil(r)) - 1  # largest integer offset strictly inside the gap
        if m < 1 or not taken[max(0, c - m) : c + m + 1].any():
            taken[c] = True
    return np.flatnonzero(taken)


def make_mask(
    height: int,
    width: int,
    acceleration: float,
    kind: str = "poisson_disc_1d",
    seed: int = 0,
    acs_lines: int = DEFAULT_ACS_LINES,
) -> SamplingMask:
    """1-D variable-density line mask along the phase-encode (column) axis.

    The center autocalibration band is always kept. For the Poisson-disc
    kind, lines are dart-thrown with a minimum gap that grows away from the
    center; the base gap is bisected so the kept-line count hits
    ``round(width / acceleration)`` (well within the 10% tolerance on the
    realized acceleration).
    """
    if kind not in MASK_KINDS:
        raise ContractError(f"unknown mask kind {kind!r}")
    if not (1.0 <= acceleration <= width / acs_lines):
        raise ContractError(
            f"acceleration {acceleration} infeasible for width {width} with {acs_lines} ACS lines"
        )

    target = max(acs_lines, int(round(width / acceleration)))
    acs = _acs_columns(width, acs_lines)
    others = np.setdiff1d(np.arange(width), acs)
    rng = np.random.default_rng(np.random.SeedSequence([0x9A09, seed, int(round(acceleration * 1000))]))

    if target >= width:
        kept = np.arange(width)
    elif kind == "uniform_random_1d":
        extra = rng.choice(others, size=target - acs_lines, replace=False)
        kept = np.sort(np.concatenate([acs, extra]))
    else:
        order = rng.permutation(others)
        center = (width - 1) / 2.0
        half_width = width / 2.0
        lo, hi = 0.25, float(width)  # count(lo) == width, count(hi) == ACS only
        for _ in range(48):
            mid = 0.5 * (lo + hi)
            if len(_poisson_accept(order, acs, center, half_width, mid, width)) >= target:
                lo = mid
            else:
                hi = mid
        kept = _poisson_accept(order, acs, center, half_width, lo, width)
        if len(kept) > target:
            # dropping lines never violates the minimum-gap constraint
            extra = np.setdiff1d(kept, acs)
            keep_extra = rng.choice(extra, size=target - acs_lines, replace=False)
            kept = np.concatenate([acs, keep_extra])
        kept = np.sort(np.asarray(kept))

    return SamplingMask(
        height=height,
        width=width,
        kept_lines=np.asarray(kept, dtype=np.int64),
        pattern_kind=kind,
        acceleration=float(acceleration),
    )


# ---------------------------------------------------------------------------
# measurement operator
# ---------------------------------------------------------------------------


def fft2c(img: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D DFT over the last two axes."""
    return np.fft.fftshift(
        np.fft.fft2(np.fft.ifftshift(img, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def ifft2c(ksp: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(
        np.fft.ifft2(np.fft.ifftshift(ksp, axes=(-2, -1)), norm="ortho"), axes=(-2, -1)
    )


def _check_image(x: np.ndarray, setup: AcquisitionSetup):
    if x.shape != setup.coils.maps.shape[1:]:
        raise DimensionError(f"image shape {x.shape} != coil map shape {setup.coils.maps.shape[1:]}")
    if (setup.mask.height, setup.mask.width) != x.shape:
        raise DimensionError(f"mask shape {(setup.mask.height, setup.mask.width)} != image shape {x.shape}")


def forward_A(x: np.ndarray, setup: AcquisitionSetup) -> KSpace:
    """Coil-weighted, masked k-space of an image."""
    _check_image(x, setup)
    maps = setup.coils.maps.astype(x.dtype, copy=False)
    grids = fft2c(maps * x[None])
    grids *= setup.mask.bool_mask()[None]
    return KSpace(grids=grids, mask=setup.mask)


def adjoint_A(b, setup: AcquisitionSetup) -> np.ndarray:
    """Adjoint of forward_A; accepts a KSpace or a raw [C,H,W] array."""
    grids = b.grids if isinstance(b, KSpace) else b
    if grids.shape != setup.coils.maps.shape:
        raise DimensionError(f"k-space shape {grids.shape} != coil map shape {setup.coils.maps.shape}")
    maps = setup.coils.maps.astype(grids.dtype, copy=False)
    imgs = ifft2c(grids * setup.mask.bool_mask()[None])
    return (np.conj(maps) * imgs).sum(axis=0)


def normal_op(x: np.ndarray, setup: AcquisitionSetup) -> np.ndarray:
    """A^H A applied to an image (fused, used by the CG solver)."""
    maps = setup.coils.maps.astype(x.dtype, copy=False)
    k = fft2c(maps * x[None])
    k *= setup.mask.bool_mask()[None]
    return (np.conj(maps) * ifft2c(k)).sum(axis=0)


def noise_sigma_for_field(field_strength: float, sigma_base: float = 0.01, low_field_scale: float = 2.0) -> float:
    """Noise level by field strength: 3T keeps the base sigma, 1.5T doubles it."""
    if field_strength not in FIELD_STRENGTHS:
        raise ContractError(f"unknown field strength {field_strength}")
    return sigma_base * (low_field_scale if field_strength == 1.5 else 1.0)


def simulate_acquisition(x: np.ndarray, setup: AcquisitionSetup, noise_sigma: float, seed: int = 0) -> KSpace:
    """forward_A plus i.i.d. complex Gaussian noise on the sampled entries."""
    if noise_sigma < 0:
        raise ContractError("noise_sigma must be >= 0")
    ksp = forward_A(x, setup)
    if noise_sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence([0x9A0A, seed]))
        noise = rng.standard_normal((2,) + ksp.grids.shape)
        ksp.grids += (
            noise_sigma * (noise[0] + 1j * noise[1]) * setup.mask.bool_mask()[None]
        ).astype(ksp.grids.dtype)
    return ksp
