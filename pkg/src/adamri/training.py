"""Two-stage training of the unrolled reconstruction model.

Stage one trains with a single unrolled step (cheap, stabilizes the
denoiser); stage two continues from the same weights at the full step
count. Minibatches are formed by gradient accumulation: each sample runs
its own forward/backward pass (samples carry their own masks and coil
setups, so there is nothing to batch across), and the averaged gradient
drives one Adam update.

Every epoch appends one JSON line {epoch, stage, loss, lam?, wall_time} to
the training log. The best-loss and final weights are written as
checkpoints (the final weights are the tail-epoch average when
``tail_avg_epochs`` is set); if the loss turns non-finite, training
restores the last finite epoch's weights, writes them as the final
checkpoint, and raises.
"""

import dataclasses
import json
import pathlib
import time
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import autodiff, dataset, metrics, mri, unrolled
from .checkpoint import save_checkpoint
from .errors import ContractError, NumericError
from .optim import Adam


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs_stage1: int
    epochs_stage2: int
    lr: float = 1e-4
    batch_size: int = 4
    seed: int = 0
    # When set, the learning rate follows a cosine from lr down to lr_final
    # over the whole run (both stages). Small-batch training at a fixed rate
    # stalls in a noise ball near the optimum; the taper buys the last bit of
    # convergence inside a fixed epoch budget.
    lr_final: Optional[float] = None
    # When > 0, the returned model (and the final checkpoint) carries the
    # average of the weights over the last N epochs instead of the last
    # epoch's weights. Small-batch iterates orbit the optimum; their mean
    # sits closer to it than any single epoch does.
    tail_avg_epochs: int = 0
    # Re-simulate every training scan each epoch with a freshly drawn mask
    # and noise realization (same acceleration, ACS width, and noise level).
    # With a handful of subjects the fixed masks are memorized quickly; the
    # redraw turns each scan into a stream of acquisitions of the same
    # anatomy. Evaluation data is never augmented.
    augment_masks: bool = False

    def __post_init__(self):
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ContractError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.lr_final is not None and not 0.0 < self.lr_final <= self.lr:
            raise ContractError(f"lr_final must be in (0, lr], got {self.lr_final}")
        if self.tail_avg_epochs < 0:
            raise ContractError("tail_avg_epochs must be >= 0")
        if self.tail_avg_epochs > self.epochs_stage1 + self.epochs_stage2:
            raise ContractError("tail_avg_epochs cannot exceed the total epoch count")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a given global epoch index (both stages)."""
        total = self.epochs_stage1 + self.epochs_stage2
        if self.lr_final is None or total <= 1:
            return self.lr
        frac = epoch / (total - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + float(np.cos(np.pi * frac)))


@dataclasses.dataclass
class TrainResult:
    epoch_losses: List[float]
    best_loss: float
    best_epoch: int
    wall_time: float
    final_path: Optional[str]
    best_path: Optional[str]
    eval_psnr: Optional[float] = None


def _snapshot(model: unrolled.ReconModel) -> Dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in model.parameters().items()}


def _restore(model: unrolled.ReconModel, snap: Dict[str, np.ndarray]):
    for k, t in model.parameters().items():
        t.data = snap[k].copy()


def _sample_loss(model: unrolled.ReconModel, s: dataset.Sample, num_steps: int, scale: float):
    cond = s.condition if model.cfg.mode == "ada" else None
    out = model.reconstruct(s.atb, s.setup, cond, num_steps=num_steps)
    loss = unrolled.loss_mse(out, s.image)
    autodiff.backward(loss * scale)
    return float(loss.data)


def resample_acquisition(s: dataset.Sample, rng: np.random.Generator) -> dataset.Sample:
    """A fresh acquisition of the same anatomy: new mask and noise draw."""
    if s.acs_lines < 1:
        raise ContractError(
            "mask augmentation needs the sample's ACS width; regenerate the dataset"
        )
    mask = mri.make_mask(
        s.setup.mask.height,
        s.setup.mask.width,
        s.acceleration,
        seed=int(rng.integers(1 << 31)),
        acs_lines=s.acs_lines,
    )
    setup = mri.AcquisitionSetup(coils=s.setup.coils, mask=mask)
    ksp = mri.simulate_acquisition(
        s.image.astype(np.complex128), setup, s.noise_sigma, seed=int(rng.integers(1 << 31))
    )
    return dataclasses.replace(s, kspace=ksp, setup=setup, _atb=None)


def mean_eval_psnr(model: unrolled.ReconModel, samples: Sequence[dataset.Sample]) -> float:
    vals = []
    with autodiff.no_grad():
        for s in samples:
            cond = s.condition if model.cfg.mode == "ada" else None
            rec = model.reconstruct(s.atb, s.setup, cond).data[0]
            vals.append(metrics.psnr(np.abs(s.image), np.abs(rec[0] + 1j * rec[1])))
    return float(np.mean(vals))


def train_model(
    model: unrolled.ReconModel,
    samples: Sequence[dataset.Sample],
    cfg: TrainConfig,
    checkpoint_dir: Optional[str] = None,
    log_path: Optional[str] = None,
    eval_samples: Optional[Sequence[dataset.Sample]] = None,
    config_hash: Optional[str] = None,
) -> TrainResult:
    if len(samples) == 0:
        raise ContractError("training requires at least one sample")

    ckpt_dir = pathlib.Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_file = open(log_path, "a") if log_path else None

    optimizer = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([0x9A0E, cfg.seed]))
    t0 = time.monotonic()

    losses: List[float] = []
    best_loss = np.inf
    best_epoch = -1
    last_good = _snapshot(model)
    epoch = 0
    total_epochs = cfg.epochs_stage1 + cfg.epochs_stage2
    tail_sum: Dict[str, np.ndarray] = {}
    tail_n = 0
    if cfg.tail_avg_epochs:
        tail_sum = {k: np.zeros(t.data.shape, np.float64) for k, t in model.parameters().items()}

    def log_line(payload: dict):
        if log_file:
            log_file.write(json.dumps(payload) + "\n")
            log_file.flush()

    def save(name: str) -> Optional[str]:
        if not ckpt_dir:
            return None
        path = ckpt_dir / name
        save_checkpoint(path, model, optimizer=optimizer, config_hash=config_hash)
        return str(path)

    best_path = None
    try:
        for stage, n_epochs, steps in (
            (1, cfg.epochs_stage1, 1),
            (2, cfg.epochs_stage2, model.cfg.num_steps),
        ):
            for _ in range(n_epochs):
                optimizer.lr = cfg.lr_at(epoch)
                perm = rng.permutation(len(samples))
                epoch_losses = []
                for start in range(0, len(perm), cfg.batch_size):
                    batch = perm[start : start + cfg.batch_size]
                    optimizer.zero_grad()
                    scale = 1.0 / len(batch)
                    for idx in batch:
                        s = samples[idx]
                        if cfg.augment_masks:
                            s = resample_acquisition(s, rng)
                        epoch_losses.append(_sample_loss(model, s, steps, scale))
                    optimizer.step()
                loss = float(np.mean(epoch_losses))
                if not np.isfinite(loss):
                    raise NumericError(f"epoch {epoch} loss is not finite ({loss})")
                payload = {
                    "epoch": epoch,
                    "stage": stage,
                    "loss": loss,
                    "wall_time": time.monotonic() - t0,
                }
                if model.cfg.mode == "plain":
                    payload["lam"] = model.current_lam()
                log_line(payload)
                losses.append(loss)
                last_good = _snapshot(model)
                if cfg.tail_avg_epochs and epoch >= total_epochs - cfg.tail_avg_epochs:
                    for k, t in model.parameters().items():
                        tail_sum[k] += t.data
                    tail_n += 1
                if loss < best_loss:
                    best_loss = loss
                    best_epoch = epoch
                    best_path = save("best")
                epoch += 1
    except NumericError:
        _restore(model, last_good)
        save("final")
        log_line({"epoch": epoch, "stage": None, "loss": None, "status": "aborted_non_finite"})
        if log_file:
            log_file.close()
        raise
    else:
        if tail_n:
            for k, t in model.parameters().items():
                t.data = (tail_sum[k] / tail_n).astype(t.data.dtype)
        eval_psnr = None
        metrics_snapshot = None
        if eval_samples:
            eval_psnr = mean_eval_psnr(model, eval_samples)
            metrics_snapshot = {"eval_psnr_mean": eval_psnr, "eval_count": len(eval_samples)}
        final_path = None
        if ckpt_dir:
            final_path = str(ckpt_dir / "final")
            save_checkpoint(
                final_path,
                model,
                optimizer=optimizer,
                metrics=metrics_snapshot,
                config_hash=config_hash,
            )
        if best_path is None and ckpt_dir:
            best_path = save("best")
        if log_file:
            log_file.close()
        return TrainResult(
            epoch_losses=losses,
            best_loss=float(best_loss) if losses else float("nan"),
            best_epoch=best_epoch,
            wall_time=time.monotonic() - t0,
            final_path=final_path,
            best_path=best_path,
            eval_psnr=eval_psnr,
        )
