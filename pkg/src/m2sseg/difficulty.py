"""Edge-aware difficulty scoring of the coarse prior map.

A stride-32 probability map is differentiated with fixed 3x3 kernels, a
level-set curvature field is evaluated from the derivative stack, and the
curvature is averaged over edge pixels only. The sigmoid of that mean is
the difficulty score; crossing the threshold flips the verdict from
"easy" to "hard".
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, DimensionError

# Correlation convention; the y kernel is the transpose.
SOBEL_X = ((-1.0, 0.0, 1.0),
           (-2.0, 0.0, 2.0),
           (-1.0, 0.0, 1.0))

HARD = "hard"
EASY = "easy"


def _as_batch(field):
    """View any of (H, W), (B, H, W), (B, 1, H, W) as (B, 1, H, W)."""
    if field.dim() == 2:
        return field[None, None], field.shape
    if field.dim() == 3:
        return field[:, None], field.shape
    if field.dim() == 4 and field.size(1) == 1:
        return field, field.shape
    raise DimensionError(f"expected a scalar field, got shape {tuple(field.shape)}")


def sobel(field):
    """d/dx and d/dy maps by 3x3 correlation with replicate-padded borders."""
    batch, shape = _as_batch(field)
    if batch.shape[-2] < 3 or batch.shape[-1] < 3:
        raise DimensionError(f"field {tuple(batch.shape[-2:])} smaller than the 3x3 kernel")
    kx = torch.tensor(SOBEL_X, dtype=batch.dtype, device=batch.device)
    weight = torch.stack([kx, kx.T])[:, None]
    padded = F.pad(batch, (1, 1, 1, 1), mode="replicate")
    out = F.conv2d(padded, weight)
    return out[:, 0].reshape(shape), out[:, 1].reshape(shape)


@dataclass
class DerivativeStack:
    """First- and second-order derivative maps of a prior map."""
    gx: torch.Tensor
    gy: torch.Tensor
    gxx: torch.Tensor
    gxy: torch.Tensor
    gyx: torch.Tensor
    gyy: torch.Tensor


def derivative_stack(prior) -> DerivativeStack:
    gx, gy = sobel(prior)
    gxx, gxy = sobel(gx)
    gyx, gyy = sobel(gy)
    return DerivativeStack(gx, gy, gxx, gxy, gyx, gyy)


def curvature(stack: DerivativeStack, eps: float = 1e-8, mode: str = "simplified"):
    """Level-set bending of the prior map.

    "simplified" uses the mixed term 2*gx*gy; "standard" keeps the
    textbook cross-derivative factor, 2*gx*gy*gxy. The denominator is
    floored at eps so flat regions evaluate to zero.
    """
    if mode == "simplified":
        cross = 2.0 * stack.gx * stack.gy
    elif mode == "standard":
        cross = 2.0 * stack.gx * stack.gy * stack.gxy
    else:
        raise ConfigurationError(f"unknown curvature mode {mode!r}")
    grad_sq = stack.gx ** 2 + stack.gy ** 2
    numerator = stack.gx ** 2 * stack.gyy - cross + stack.gy ** 2 * stack.gxx
    return numerator / torch.clamp(grad_sq ** 1.5, min=eps)


def edge_magnitude(gx, gy):
    return torch.sqrt(gx ** 2 + gy ** 2)


def difficulty_score(kappa, edge, eps: float = 1e-8) -> float:
    """Sigmoid of the edge-weighted curvature mean.

    A map with (numerically) no edges scores exactly 0: a featureless
    prior is maximally easy.
    """
    if kappa.shape != edge.shape:
        raise DimensionError(
            f"curvature {tuple(kappa.shape)} and edge {tuple(edge.shape)} shapes differ")
    total = edge.sum()
    if total.item() < eps:
        return 0.0
    return torch.sigmoid((kappa * edge).sum() / total).item()


@dataclass(frozen=True)
class DifficultyVerdict:
    score: float
    label: str
    threshold: float


def classify(score: float, threshold: float = 0.5) -> DifficultyVerdict:
    """Hard if and only if the score reaches the threshold."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError("threshold must lie in (0, 1)")
    label = HARD if score >= threshold else EASY
    return DifficultyVerdict(float(score), label, threshold)


def assess(prior, threshold: float = 0.5, eps: float = 1e-8,
           mode: str = "simplified") -> list[DifficultyVerdict]:
    """Verdict for each map in a (B, H, W) batch of prior maps.

    Maps smaller than the 3x3 kernel are bilinearly upsampled first.
    """
    if prior.dim() == 2:
        prior = prior[None]
    if prior.dim() != 3:
        raise DimensionError(f"expected (B, H, W) prior maps, got {tuple(prior.shape)}")
    h, w = prior.shape[-2:]
    if h < 3 or w < 3:
        prior = F.interpolate(prior[:, None], size=(max(h, 3), max(w, 3)),
                              mode="bilinear", align_corners=False)[:, 0]
    stack = derivative_stack(prior)
    kappa = curvature(stack, eps=eps, mode=mode)
    edge = edge_magnitude(stack.gx, stack.gy)
    return [classify(difficulty_score(kappa[i], edge[i], eps=eps), threshold)
            for i in range(prior.shape[0])]


class GlobalPriorHead(nn.Module):
    """1x1 projection plus sigmoid over the deepest refined skip map."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, 1, 1)

    def forward(self, x):
        return torch.sigmoid(self.proj(x)).squeeze(1)
