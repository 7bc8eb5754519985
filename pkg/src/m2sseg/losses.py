"""Training objective: per-pixel BCE on the mask and on the upsampled
prior map, plus the cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .config import TrainConfig
from .errors import ContractViolation, DimensionError
from .m2s_attention import resize


def bce(target, pred, eps: float = 1e-7):
    """Mean over pixels of -[t*log(p) + (1-t)*log(1-p)] with p clamped
    to [eps, 1-eps] for log stability."""
    if target.shape != pred.shape:
        raise DimensionError(
            f"target {tuple(target.shape)} and prediction {tuple(pred.shape)} shapes differ")
    p = pred.clamp(eps, 1.0 - eps)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1.0 - t) * torch.log(1.0 - p)).mean()


@dataclass
class LossBreakdown:
    main_bce: torch.Tensor
    prior_bce: torch.Tensor
    total: torch.Tensor


def total_loss(target, pred_mask, prior, eps: float = 1e-7) -> LossBreakdown:
    """Both BCE terms against the same target; the prior map is bilinearly
    upsampled to full resolution first."""
    upsampled = resize(prior[:, None], target.shape[-2:])[:, 0]
    main = bce(target, pred_mask, eps)
    prior_term = bce(target, upsampled, eps)
    return LossBreakdown(main_bce=main, prior_bce=prior_term, total=main + prior_term)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Single cosine cycle from initial_lr down to final_lr."""
    if not 0 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside [0, {total_steps}]")
    if step == 0:
        return cfg.initial_lr
    if step == total_steps:
        return cfg.final_lr
    span = cfg.initial_lr - cfg.final_lr
    return cfg.final_lr + 0.5 * span * (1.0 + math.cos(math.pi * step / total_steps))
