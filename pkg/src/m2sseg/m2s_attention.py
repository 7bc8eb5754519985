"""Skip-connection attention: frequency-domain channel gating plus a
multi-scale spatial pyramid, wrapped around a residual path.

All four encoder stages are projected to a common width, resampled to the
shared target grid, and concatenated. The concatenated map is gated
per channel by its response to a small set of cosine basis images, then
refined by a dilated-convolution pyramid with foreground/background
gating at each scale, and finally split back into per-stage skip maps.
"""
from __future__ import annotations

import math
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import M2SConfig
from .errors import ConfigurationError, DimensionError


def resize(x, size):
    """Bilinear resample to `size`; a no-op when dims already match."""
    size = tuple(size)
    if tuple(x.shape[-2:]) == size:
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


def frequency_pairs(height: int, width: int, count: int):
    """The `count` lowest (u, v) index pairs, ordered by u + v with ties
    broken by ascending u."""
    if count > height * width:
        raise ConfigurationError(
            f"cannot select {count} frequency pairs on a {height}x{width} grid")
    pairs = sorted(((u, v) for u in range(height) for v in range(width)),
                   key=lambda p: (p[0] + p[1], p[0]))
    return pairs[:count]


def dct_basis(height: int, width: int, count: int, mode: str = "standard"):
    """Cosine-product basis images for the selected frequency pairs.

    "standard" places the half-sample offset on the spatial index,
    cos(pi*(h+1/2)*u/H) * cos(pi*(w+1/2)*v/W), so pair (0, 0) is the
    constant image and distinct images are orthogonal. "freq_offset"
    moves the offset onto the frequency index instead.
    """
    pairs = frequency_pairs(height, width, count)
    hs = torch.arange(height, dtype=torch.float64)
    ws = torch.arange(width, dtype=torch.float64)
    images = torch.empty(count, height, width, dtype=torch.float64)
    for k, (u, v) in enumerate(pairs):
        if mode == "standard":
            row = torch.cos(math.pi * (hs + 0.5) * u / height)
            col = torch.cos(math.pi * (ws + 0.5) * v / width)
        elif mode == "freq_offset":
            row = torch.cos(math.pi * hs * (u + 0.5) / height)
            col = torch.cos(math.pi * ws * (v + 0.5) / width)
        else:
            raise ConfigurationError(f"unknown dct_mode {mode!r}")
        images[k] = row[:, None] * col[None, :]
    return pairs, images


def dump_basis(path, height: int, width: int, count: int, mode: str = "standard"):
    """Write the basis images as raw little-endian float32, K*H*W values in
    frequency order, for cross-implementation diffing."""
    _, images = dct_basis(height, width, count, mode)
    path = Path(path)
    path.write_bytes(images.numpy().astype("<f4").tobytes())
    return path


def spectral_project(feature, basis_images):
    """Project (B, C, H, W) features onto each basis image.

    Returns the weighted-sum responses and the spatial maxima of the
    element-wise products, both shaped (B, K, C).
    """
    if tuple(feature.shape[-2:]) != tuple(basis_images.shape[-2:]):
        raise DimensionError(
            f"basis grid {tuple(basis_images.shape[-2:])} does not match "
            f"feature grid {tuple(feature.shape[-2:])}")
    basis = basis_images.to(device=feature.device, dtype=feature.dtype)
    sums = torch.einsum("bchw,khw->bkc", feature, basis)
    maxes = torch.stack(
        [(feature * basis[k]).amax(dim=(-2, -1)) for k in range(basis.shape[0])], dim=1)
    return sums, maxes


def recalibrate(feature, weights):
    """Scale each channel of (B, C, H, W) by its (B, C) weight."""
    if weights.shape[-1] != feature.shape[1]:
        raise DimensionError(
            f"{weights.shape[-1]} channel weights for a {feature.shape[1]}-channel map")
    return feature * weights[:, :, None, None]


class SpectralChannelAttention(nn.Module):
    """Channel gate from pooled frequency responses of the fused map.

    Each pooled vector passes through a shared bottleneck; the results are
    summed over frequencies and both pooling modes before the sigmoid, so
    every gate value lies strictly in (0, 1).
    """

    def __init__(self, channels: int, cfg: M2SConfig):
        super().__init__()
        hidden = max(channels // cfg.bottleneck_reduction, 1)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)
        self.num_frequencies = cfg.num_frequencies
        self.dct_mode = cfg.dct_mode
        self._basis_cache: dict = {}

    def basis_for(self, height: int, width: int):
        key = (height, width)
        if key not in self._basis_cache:
            self._basis_cache[key] = dct_basis(
                height, width, self.num_frequencies, self.dct_mode)[1]
        return self._basis_cache[key]

    def forward(self, fused):
        basis = self.basis_for(fused.shape[-2], fused.shape[-1])
        sums, maxes = spectral_project(fused, basis)
        pooled = torch.cat([sums, maxes], dim=1)           # (B, 2K, C)
        squeezed = self.fc2(F.relu(self.fc1(pooled)))      # shared bottleneck
        return torch.sigmoid(squeezed.sum(dim=1))          # (B, C)


class PyramidLevel(nn.Module):
    """One scale branch: downsample, dilated context conv, channel squeeze,
    foreground/background gating, then restore to the fused width."""

    def __init__(self, level: int, channels: int, cfg: M2SConfig):
        super().__init__()
        self.level = level
        self.scale = 2 ** (level - 1)
        self.dilation = 2 * level + 1
        self.min_height = cfg.min_height
        self.min_width = cfg.min_width
        self.level_channels = max(int(channels / cfg.channel_decay ** (level - 1)), cfg.min_channels)
        self.context = nn.Conv2d(channels, channels, 3, padding=self.dilation, dilation=self.dilation)
        self.squeeze = nn.Conv2d(channels, self.level_channels, 1)
        self.foreground = nn.Conv2d(self.level_channels, 1, 1)
        self.restore = nn.Conv2d(self.level_channels, channels, 3, padding=1)
        self.fg_weight = nn.Parameter(torch.tensor(1.0))
        self.bg_weight = nn.Parameter(torch.tensor(1.0))

    def level_size(self, height: int, width: int):
        return (max(height // self.scale, self.min_height),
                max(width // self.scale, self.min_width))

    def decompose(self, x):
        x = resize(x, self.level_size(*x.shape[-2:]))
        return self.squeeze(F.relu(self.context(x)))

    def blend(self, level_feature):
        fg = torch.sigmoid(self.foreground(level_feature))
        return (self.fg_weight * (level_feature * fg)
                + self.bg_weight * (level_feature * (1.0 - fg)))

    def attend(self, level_feature):
        return self.restore(self.blend(level_feature))

    def forward(self, x):
        return self.attend(self.decompose(x))


class M2SAttention(nn.Module):
    """Skip refinement between encoder and decoder stages."""

    def __init__(self, encoder_channels, cfg: M2SConfig):
        super().__init__()
        self.cfg = cfg
        self.reduce = nn.ModuleList(
            [nn.Conv2d(c, cfg.reduced_channels, 1) for c in encoder_channels])
        channels = cfg.total_channels
        self.spectral = SpectralChannelAttention(channels, cfg)
        self.levels = nn.ModuleList(
            [PyramidLevel(l, channels, cfg) for l in range(1, cfg.pyramid_levels + 1)])

    def preprocess(self, stages):
        """Project each stage to the shared width, resample to the target
        grid, and concatenate in stage order.

        The stage whose native grid already matches the target passes
        through without resampling. Returns the fused map and the
        per-stage reduced maps.
        """
        if len(stages) != len(self.reduce):
            raise DimensionError(f"expected {len(self.reduce)} stages, got {len(stages)}")
        div = self.cfg.target_divisor
        target = (stages[0].shape[-2] * 4 // div, stages[0].shape[-1] * 4 // div)
        if min(target) < 1:
            raise ConfigurationError(f"target grid {target} collapsed; divisor {div} too large")
        reduced = [resize(proj(stage), target) for proj, stage in zip(self.reduce, stages)]
        return torch.cat(reduced, dim=1), reduced

    def refine(self, fused):
        """Spectral gating plus pyramid refinement around a residual path.

        The pyramid branches read the recalibrated map but the residual
        adds back the raw fused map, so zeroed branches are the identity.
        """
        gated = recalibrate(fused, self.spectral(fused))
        out = fused
        for level in self.levels:
            out = out + resize(level(gated), fused.shape[-2:])
        return out

    def postprocess(self, refined, reduced, native_sizes):
        """Split the refined map into per-stage chunks, return each to its
        native grid, and add the stage's reduced map as a residual."""
        cr = self.cfg.reduced_channels
        if refined.shape[1] != len(reduced) * cr:
            raise DimensionError(
                f"refined map has {refined.shape[1]} channels, expected {len(reduced) * cr}")
        outputs = []
        for i, size in enumerate(native_sizes):
            chunk = refined[:, i * cr:(i + 1) * cr]
            outputs.append(resize(chunk, size) + resize(reduced[i], size))
        return outputs

    def forward(self, stages):
        fused, reduced = self.preprocess(stages)
        refined = self.refine(fused)
        return self.postprocess(refined, reduced, [s.shape[-2:] for s in stages])
