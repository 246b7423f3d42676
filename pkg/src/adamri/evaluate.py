"""Evaluation reports over a grid of acquisition settings.

Per-image metrics land in CSV rows; aggregates (grouped by setting and
acceleration) are recomputed from those rows, so re-aggregating a written
CSV reproduces the JSON summary exactly. Cross-domain evaluation feeds the
model a condition vector whose contrast code is deliberately wrong,
quantifying how much the conditioning actually steers the reconstruction.
"""

import csv
import json
import pathlib
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff, conditioning, dataset, metrics, unrolled
from .errors import ContractError

CSV_COLUMNS = [
    "setting",
    "contrast",
    "field_strength",
    "acceleration",
    "subject",
    "psnr",
    "ssim",
    "psnr_zero_filled",
    "ssim_zero_filled",
]


def reconstruct_complex(
    model: unrolled.ReconModel,
    s: dataset.Sample,
    condition: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Inference on one sample; returns the complex image."""
    if condition is None and model.cfg.mode == "ada":
        condition = s.condition
    with autodiff.no_grad():
        out = model.reconstruct(s.atb, s.setup, condition).data[0]
    return out[0] + 1j * out[1]


def zero_filled(s: dataset.Sample) -> np.ndarray:
    return s.atb


def evaluate_samples(
    model: unrolled.ReconModel,
    samples: Sequence[dataset.Sample],
    condition_fn: Optional[Callable[[dataset.Sample], np.ndarray]] = None,
) -> List[dict]:
    """One metric row per sample, sorted for stable output."""
    rows = []
    for s in samples:
        cond = condition_fn(s) if condition_fn else None
        rec = reconstruct_complex(model, s, cond)
        gt_mag = np.abs(s.image)
        zf = zero_filled(s)
        rows.append(
            {
                "setting": s.setting,
                "contrast": s.contrast,
                "field_strength": s.field_strength,
                "acceleration": s.acceleration,
                "subject": s.subject,
                "psnr": metrics.psnr(gt_mag, np.abs(rec)),
                "ssim": metrics.ssim(gt_mag, np.abs(rec)),
                "psnr_zero_filled": metrics.psnr(gt_mag, np.abs(zf)),
                "ssim_zero_filled": metrics.ssim(gt_mag, np.abs(zf)),
            }
        )
    rows.sort(key=lambda r: (r["setting"], r["acceleration"], r["subject"]))
    return rows


def aggregate(rows: Sequence[dict]) -> Dict[str, dict]:
    """Mean/std per (setting, acceleration) cell plus an overall entry."""
    cells: Dict[str, List[dict]] = {}
    for r in rows:
        key = f"{r['setting']}|R{format(r['acceleration'], 'g')}"
        cells.setdefault(key, []).append(r)
    cells["overall"] = list(rows)

    out = {}
    for key, cell in sorted(cells.items()):
        entry = {"count": len(cell)}
        for metric in ("psnr", "ssim", "psnr_zero_filled", "ssim_zero_filled"):
            vals = np.array([c[metric] for c in cell], dtype=np.float64)
            entry[f"{metric}_mean"] = float(vals.mean())
            entry[f"{metric}_std"] = float(vals.std(ddof=0))
        out[key] = entry
    return out


def write_report(rows: Sequence[dict], prefix) -> Dict[str, str]:
    """Write <prefix>.csv (per image) and <prefix>.json (aggregates)."""
    prefix = pathlib.Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in CSV_COLUMNS})
    json_path.write_text(json.dumps(aggregate(rows), indent=2, sort_keys=True))
    return {"csv": str(csv_path), "json": str(json_path)}


def read_rows(csv_path) -> List[dict]:
    rows = []
    with open(csv_path, newline="") as f:
        for r in csv.DictReader(f):
            row = dict(r)
            for k in ("psnr", "ssim", "psnr_zero_filled", "ssim_zero_filled", "acceleration", "field_strength"):
                row[k] = float(row[k])
            row["subject"] = int(row["subject"])
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# cross-domain conditions
# ---------------------------------------------------------------------------


def swapped_contrast_condition(s: dataset.Sample, contrasts: Sequence[str]) -> np.ndarray:
    """The sample's condition vector with the other contrast's one-hot code.

    ``contrasts`` must contain exactly two entries; the sample's own
    contrast is replaced by the remaining one.
    """
    others = [c for c in contrasts if c != s.contrast]
    if len(others) != 1:
        raise ContractError(
            f"contrast swap needs exactly one alternative, got {others} from {contrasts}"
        )
    return conditioning.encode_condition(others[0], s.field_strength, s.acceleration)


def cross_domain_rows(
    model: unrolled.ReconModel,
    samples: Sequence[dataset.Sample],
    contrasts: Sequence[str],
) -> List[dict]:
    """Per-cell mean PSNR with the true vs the swapped contrast code."""
    if model.cfg.mode != "ada":
        raise ContractError("cross-domain evaluation requires an adaptive-mode model")
    true_rows = evaluate_samples(model, samples)
    swap_rows = evaluate_samples(model, samples, lambda s: swapped_contrast_condition(s, contrasts))
    agg_true = aggregate(true_rows)
    agg_swap = aggregate(swap_rows)
    out = []
    for key in sorted(agg_true):
        if key == "overall":
            continue
        out.append(
            {
                "cell": key,
                "psnr_true": agg_true[key]["psnr_mean"],
                "psnr_swapped": agg_swap[key]["psnr_mean"],
                "drop": agg_true[key]["psnr_mean"] - agg_swap[key]["psnr_mean"],
            }
        )
    return out


# ---------------------------------------------------------------------------
# lam curves and paired comparison
# ---------------------------------------------------------------------------


def lambda_curve(
    model: unrolled.ReconModel,
    contrast: str,
    field_strength: float,
    accelerations: Sequence[float],
) -> List[dict]:
    """lam(m) as predicted for a sweep of acceleration factors."""
    if model.cfg.mode != "ada":
        raise ContractError("lambda curves require an adaptive-mode model")
    rows = []
    for r in accelerations:
        cond = conditioning.encode_condition(contrast, field_strength, float(r))
        rows.append({"acceleration": float(r), "lam": model.current_lam(cond)})
    return rows


def compare_models(
    model_a: unrolled.ReconModel,
    model_b: unrolled.ReconModel,
    samples: Sequence[dataset.Sample],
) -> dict:
    """Paired per-image PSNR comparison with a Wilcoxon signed-rank test."""
    psnr_a, psnr_b = [], []
    for s in samples:
        gt = np.abs(s.image)
        psnr_a.append(metrics.psnr(gt, np.abs(reconstruct_complex(model_a, s))))
        psnr_b.append(metrics.psnr(gt, np.abs(reconstruct_complex(model_b, s))))
    res = metrics.wilcoxon_signed_rank(psnr_a, psnr_b)
    return {
        "n": res.n,
        "statistic": res.statistic,
        "p_value": res.p_value,
        "method": res.method,
        "psnr_mean_a": float(np.mean(psnr_a)),
        "psnr_mean_b": float(np.mean(psnr_b)),
    }
