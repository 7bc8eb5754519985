"""End-to-end optimization loop with seeded shuffling and CSV loss logs."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_model
from .config import TrainConfig, derive_seed
from .errors import ConfigurationError, TrainingDiverged
from .losses import lr_at, total_loss
from .metrics import binarize, dsc

LOG_COLUMNS = ("epoch", "main_bce", "prior_bce", "total", "lr")


@dataclass
class EpochStats:
    epoch: int
    main_bce: float
    prior_bce: float
    total: float
    lr: float
    val_dsc: float


@dataclass
class TrainResult:
    history: list[EpochStats]
    best_epoch: int
    best_dsc: float
    final_checkpoint: Path | None
    best_checkpoint: Path | None
    log_path: Path | None


def batch_tensors(samples):
    """Stack samples into (B, 3, H, W) images and (B, H, W) masks."""
    images = torch.from_numpy(np.stack([s.image for s in samples]))
    masks = torch.from_numpy(np.stack([s.mask for s in samples]).astype(np.float32))
    return images, masks


def _first_nonfinite(named_tensors):
    for name, tensor in named_tensors:
        if not torch.isfinite(tensor).all():
            return name
    return None


def _mean_dsc(model, images, masks, threshold=0.5):
    with torch.no_grad():
        out = model(images)
    scores = []
    for i in range(images.shape[0]):
        pred = binarize(out.mask[i].numpy(), threshold)
        scores.append(dsc(pred, masks[i].numpy() >= 0.5))
    return float(np.mean(scores))


def write_loss_log(path, history):
    lines = [",".join(LOG_COLUMNS)]
    for row in history:
        lines.append(f"{row.epoch},{row.main_bce!r},{row.prior_bce!r},{row.total!r},{row.lr!r}")
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def train(model, samples, cfg: TrainConfig, out_dir=None, val_samples=None,
          early_stop_dsc: float | None = None, early_stop_after: int = 0) -> TrainResult:
    """Optimize the model on L_total with Adam and the cosine schedule.

    Writes the per-epoch loss log, a final checkpoint, and a checkpoint at
    the best validation DSC when out_dir is given. Fully reproducible from
    cfg.seed: the shuffle stream is derived from it and nothing else
    consumes randomness.
    """
    if not samples:
        raise ConfigurationError("training requires a non-empty dataset")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    images, masks = batch_tensors(samples)
    val_images, val_masks = (images, masks) if val_samples is None else batch_tensors(val_samples)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.initial_lr,
                                 betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)
    shuffle = random.Random(derive_seed(cfg.seed, "batch-shuffle"))
    count = len(samples)
    steps_per_epoch = math.ceil(count / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch

    history: list[EpochStats] = []
    best_dsc, best_epoch = -1.0, -1
    best_path = out_dir / "best.ckpt" if out_dir is not None else None
    final_path = out_dir / "final.ckpt" if out_dir is not None else None
    log_path = out_dir / "loss_log.csv" if out_dir is not None else None
    global_step = 0

    for epoch in range(1, cfg.epochs + 1):
        order = list(range(count))
        shuffle.shuffle(order)
        sums = {"main": 0.0, "prior": 0.0, "total": 0.0}
        lr = cfg.initial_lr
        for start in range(0, count, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            lr = lr_at(global_step, total_steps, cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            out = model(images[idx])
            loss = total_loss(masks[idx], out.mask, out.prior, cfg.loss_epsilon)
            bad = _first_nonfinite([
                ("prediction_mask", out.mask), ("prior_map", out.prior),
                ("main_bce", loss.main_bce), ("prior_bce", loss.prior_bce),
            ])
            if bad is not None:
                raise TrainingDiverged(
                    f"non-finite values in {bad} at epoch {epoch}, step {global_step}")
            optimizer.zero_grad()
            loss.total.backward()
            optimizer.step()
            sums["main"] += loss.main_bce.item()
            sums["prior"] += loss.prior_bce.item()
            sums["total"] += loss.total.item()
            global_step += 1

        val_dsc = _mean_dsc(model, val_images, val_masks)
        history.append(EpochStats(
            epoch=epoch,
            main_bce=sums["main"] / steps_per_epoch,
            prior_bce=sums["prior"] / steps_per_epoch,
            total=sums["total"] / steps_per_epoch,
            lr=lr,
            val_dsc=val_dsc,
        ))
        if val_dsc > best_dsc:
            best_dsc, best_epoch = val_dsc, epoch
            if best_path is not None:
                save_model(best_path, model, {"epoch": epoch, "val_dsc": val_dsc})
        if (early_stop_dsc is not None and epoch >= early_stop_after
                and val_dsc >= early_stop_dsc):
            break

    if final_path is not None:
        save_model(final_path, model, {"epoch": history[-1].epoch})
    if log_path is not None:
        write_loss_log(log_path, history)
    return TrainResult(history=history, best_epoch=best_epoch, best_dsc=best_dsc,
                       final_checkpoint=final_path, best_checkpoint=best_path,
                       log_path=log_path)
