"""Command-line interface.

Subcommands cover the full workflow: synthesize a dataset, train the
adaptive / jointly trained plain / per-setting plain models, evaluate
checkpoints into CSV+JSON reports, reconstruct single scans to PNG, sweep
the modulation-network width or the training-set size, trace lam against
acceleration, and compare two checkpoints with a paired significance test.

Exit codes: 0 success, 2 usage or configuration error, 3 data or
checkpoint schema error, 4 numeric failure (divergence, undefined test).
"""

import argparse
import dataclasses
import json
import pathlib
import sys
from typing import List, Optional

import numpy as np

from . import config as config_mod
from . import conditioning, dataset, evaluate, training, unrolled
from .checkpoint import load_checkpoint
from .errors import (
    CompatibilityError,
    ContractError,
    DimensionError,
    NumericError,
    UndefinedTestError,
)

TRAIN_MODES = ("ada", "joint", "individual")


def _add_config_args(p: argparse.ArgumentParser):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config", help="path to a JSON run configuration")
    g.add_argument("--preset", choices=config_mod.PRESETS, help="packaged configuration name")


def _parse_accels(text: str) -> List[float]:
    """Either comma-separated values or an inclusive start:step:stop range."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ContractError(f"range must be start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise ContractError(f"bad range {text!r}")
        n = int(round((stop - start) / step)) + 1
        vals = [start + i * step for i in range(n)]
        return [round(v, 10) for v in vals if v <= stop + 1e-9]
    return [float(p) for p in text.split(",") if p]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adamri",
        description="Condition-adaptive unrolled reconstruction for undersampled parallel MRI.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a phantom dataset")
    _add_config_args(p)
    p.add_argument("--root", help="override the dataset root from the config")
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset")

    p = sub.add_parser("train", help="train a reconstruction model")
    _add_config_args(p)
    p.add_argument("--mode", choices=TRAIN_MODES, required=True)
    p.add_argument("--setting", help="scan setting like T2-3T (required for --mode individual)")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--data-root", help="override the dataset root")
    p.add_argument("--epochs-stage1", type=int, help="override stage-1 epochs")
    p.add_argument("--epochs-stage2", type=int, help="override stage-2 epochs")
    p.add_argument("--seed", type=int, help="override the training seed")

    p = sub.add_parser("eval", help="evaluate a checkpoint into CSV + JSON reports")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", required=True, help="report path prefix (writes .csv and .json)")
    p.add_argument("--cross-domain", action="store_true", help="also evaluate with swapped contrast codes")

    p = sub.add_parser("infer", help="reconstruct one stored scan")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--entry", required=True, help="entry directory name inside the dataset")
    p.add_argument("--accel", type=float, required=True)
    p.add_argument("--out", required=True, help="output prefix (writes .png and .bin)")

    p = sub.add_parser("sweep-mlp", help="train at several modulation widths, hold one setting out")
    _add_config_args(p)
    p.add_argument("--widths", default="2,4,8,16,32,64")
    p.add_argument("--held-out", required=True, help="setting excluded from training, e.g. T2-3T")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("sweep-data", help="adaptive vs joint plain at growing training-set sizes")
    _add_config_args(p)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("lambda-curve", help="trace lam against acceleration for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--contrast", required=True)
    p.add_argument("--field", type=float, required=True)
    p.add_argument("--accels", default="2.25:0.25:4.0")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("compare", help="paired Wilcoxon test between two checkpoints")
    p.add_argument("--checkpoint-a", required=True)
    p.add_argument("--checkpoint-b", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")

    return parser


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------


def _load_run_config(args) -> config_mod.RunConfig:
    return config_mod.load_config(path=args.config, preset=args.preset)


def _cmd_gen_data(args) -> int:
    cfg = _load_run_config(args)
    root = args.root or cfg.data_root
    manifest = dataset.generate_dataset(root, cfg.data, force=args.force)
    print(json.dumps({"root": str(root), "entries": len(manifest["entries"])}))
    return 0


def _train_one(
    cfg: config_mod.RunConfig,
    mode: str,
    samples,
    eval_samples,
    out_dir: pathlib.Path,
    seed_override: Optional[int] = None,
) -> training.TrainResult:
    model_mode = "ada" if mode == "ada" else "plain"
    tcfg = cfg.train if seed_override is None else dataclasses.replace(cfg.train, seed=seed_override)
    model = unrolled.ReconModel(cfg.model.unroll_config(model_mode), seed=tcfg.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config_mod.canonical_json(cfg))
    return training.train_model(
        model,
        samples,
        tcfg,
        checkpoint_dir=str(out_dir),
        log_path=str(out_dir / "log.jsonl"),
        eval_samples=eval_samples,
        config_hash=config_mod.config_hash(cfg),
    )


def _cmd_train(args) -> int:
    cfg = _load_run_config(args)
    overrides = {}
    if args.epochs_stage1 is not None:
        overrides["epochs_stage1"] = args.epochs_stage1
    if args.epochs_stage2 is not None:
        overrides["epochs_stage2"] = args.epochs_stage2
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **overrides))
    root = args.data_root or cfg.data_root

    settings = None
    suffix = args.mode
    if args.mode == "individual":
        if not args.setting:
            raise ContractError("--mode individual requires --setting (e.g. T2-3T)")
        conditioning.parse_setting(args.setting)
        settings = [args.setting]
        suffix = f"individual-{args.setting}"
    elif args.setting:
        raise ContractError("--setting is only valid with --mode individual")

    samples = dataset.load_split(root, "train", settings=settings)
    eval_samples = dataset.load_split(root, "test", settings=settings)
    out_dir = pathlib.Path(args.out) if args.out else pathlib.Path(cfg.out_dir) / suffix
    result = _train_one(cfg, args.mode, samples, eval_samples, out_dir)
    print(
        json.dumps(
            {
                "mode": args.mode,
                "epochs": len(result.epoch_losses),
                "final_loss": result.epoch_losses[-1] if result.epoch_losses else None,
                "best_loss": result.best_loss,
                "eval_psnr": result.eval_psnr,
                "wall_time": round(result.wall_time, 2),
                "checkpoint": result.final_path,
            }
        )
    )
    return 0


def _cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    samples = dataset.load_split(args.data, args.split)
    rows = evaluate.evaluate_samples(model, samples)
    paths = evaluate.write_report(rows, args.out)
    out = {"report": paths, "aggregates": evaluate.aggregate(rows)["overall"]}
    if args.cross_domain:
        contrasts = dataset.load_manifest(args.data)["spec"]["contrasts"]
        cd = evaluate.cross_domain_rows(model, samples, contrasts)
        cd_path = pathlib.Path(args.out).with_suffix(".cross_domain.json")
        cd_path.write_text(json.dumps(cd, indent=2))
        out["cross_domain"] = str(cd_path)
    print(json.dumps(out))
    return 0


def _cmd_infer(args) -> int:
    from PIL import Image

    model, _, _ = load_checkpoint(args.checkpoint)
    manifest = dataset.load_manifest(args.data)
    matches = [e for e in manifest["entries"] if e["dir"] == args.entry]
    if not matches:
        raise CompatibilityError(f"entry {args.entry!r} not found in {args.data}")
    sample = dataset.load_sample(args.data, matches[0], args.accel)
    rec = evaluate.reconstruct_complex(model, sample)

    prefix = pathlib.Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    mag = np.abs(rec)
    png = (255.0 * mag / max(mag.max(), 1e-12)).clip(0, 255).astype(np.uint8)
    Image.fromarray(png).save(prefix.with_suffix(".png"))
    prefix.with_suffix(".bin").write_bytes(rec.astype("<c8").tobytes())

    from . import metrics

    print(
        json.dumps(
            {
                "entry": args.entry,
                "acceleration": args.accel,
                "psnr": metrics.psnr(np.abs(sample.image), mag),
                "png": str(prefix.with_suffix(".png")),
                "bin": str(prefix.with_suffix(".bin")),
            }
        )
    )
    return 0


def _write_csv(path, rows: List[dict]):
    import csv

    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def _cmd_sweep_mlp(args) -> int:
    cfg = _load_run_config(args)
    held = args.held_out
    conditioning.parse_setting(held)
    widths = [int(w) for w in args.widths.split(",") if w]
    if not widths:
        raise ContractError("--widths must list at least one integer")

    manifest = dataset.load_manifest(cfg.data_root)
    all_settings = sorted(
        {
            conditioning.setting_name(e["contrast"], e["field_strength"])
            for e in manifest["entries"]
        }
    )
    if held not in all_settings:
        raise ContractError(f"held-out setting {held!r} not in dataset settings {all_settings}")
    train_settings = [s for s in all_settings if s != held]

    train_samples = dataset.load_split(cfg.data_root, "train", settings=train_settings)
    heldout_samples = dataset.load_split(cfg.data_root, "test", settings=[held])
    indist_samples = dataset.load_split(cfg.data_root, "test", settings=train_settings)

    rows = []
    for width in widths:
        mcfg = dataclasses.replace(cfg.model, mlp_width=width)
        run_cfg = dataclasses.replace(cfg, model=mcfg)
        out_dir = pathlib.Path(cfg.out_dir) / f"sweep-mlp-N{width}"
        _train_one(run_cfg, "ada", train_samples, None, out_dir)
        model, _, _ = load_checkpoint(out_dir / "final")
        rows.append(
            {
                "width": width,
                "mlp_params": conditioning.count_mlp_params(width, cfg.model.num_channels),
                "psnr_held_out": training.mean_eval_psnr(model, heldout_samples),
                "psnr_in_dist": training.mean_eval_psnr(model, indist_samples),
            }
        )
        print(json.dumps(rows[-1]))
    _write_csv(args.out, rows)
    return 0


def _cmd_sweep_data(args) -> int:
    cfg = _load_run_config(args)
    test_samples = dataset.load_split(cfg.data_root, "test")
    all_train = dataset.load_split(cfg.data_root, "train")
    max_subjects = max(s.subject for s in all_train) + 1

    rows = []
    for n_sub in range(1, max_subjects + 1):
        subset = [s for s in all_train if s.subject < n_sub]
        for mode in ("ada", "joint"):
            out_dir = pathlib.Path(cfg.out_dir) / f"sweep-data-S{n_sub}-{mode}"
            _train_one(cfg, mode, subset, None, out_dir)
            model, _, _ = load_checkpoint(out_dir / "final")
            rows.append(
                {
                    "num_subjects": n_sub,
                    "mode": mode,
                    "psnr_test": training.mean_eval_psnr(model, test_samples),
                }
            )
            print(json.dumps(rows[-1]))
    _write_csv(args.out, rows)
    return 0


def _cmd_lambda_curve(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    accels = _parse_accels(args.accels)
    rows = evaluate.lambda_curve(model, args.contrast, args.field, accels)
    _write_csv(args.out, rows)
    print(json.dumps({"out": str(args.out), "points": len(rows)}))
    return 0


def _cmd_compare(args) -> int:
    model_a, _, _ = load_checkpoint(args.checkpoint_a)
    model_b, _, _ = load_checkpoint(args.checkpoint_b)
    samples = dataset.load_split(args.data, args.split)
    print(json.dumps(evaluate.compare_models(model_a, model_b, samples)))
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "infer": _cmd_infer,
    "sweep-mlp": _cmd_sweep_mlp,
    "sweep-data": _cmd_sweep_data,
    "lambda-curve": _cmd_lambda_curve,
    "compare": _cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CompatibilityError, DimensionError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (NumericError, UndefinedTestError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
