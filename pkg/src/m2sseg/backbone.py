"""Four-stage pyramid transformer encoder and the shared transformer block.

The encoder honors a fixed stride contract: stage i emits a map at
1/2^(i+1) of the input resolution with the configured channel width.
The same block is reused by the decoder stages.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import BackboneConfig
from .errors import ConfigurationError, DimensionError

STRIDE_FACTOR = 32


class SpatialReductionAttention(nn.Module):
    """Multi-head self-attention whose keys and values come from a strided
    convolution of the token grid when sr_ratio > 1."""

    def __init__(self, dim: int, num_heads: int, sr_ratio: int = 1):
        super().__init__()
        if dim % num_heads:
            raise ConfigurationError(f"attention width {dim} not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.sr_ratio = sr_ratio
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, kernel_size=sr_ratio, stride=sr_ratio)
            self.sr_norm = nn.LayerNorm(dim)

    def forward(self, tokens, size):
        b, n, c = tokens.shape
        h, w = size
        q = self.q(tokens).reshape(b, n, self.num_heads, c // self.num_heads).transpose(1, 2)
        source = tokens
        if self.sr_ratio > 1:
            grid = tokens.transpose(1, 2).reshape(b, c, h, w)
            grid = self.sr(grid)
            source = self.sr_norm(grid.flatten(2).transpose(1, 2))
        kv = self.kv(source).reshape(b, -1, 2, self.num_heads, c // self.num_heads)
        k, v = kv.permute(2, 0, 3, 1, 4).unbind(0)
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(out)


class ConvFFN(nn.Module):
    """Token MLP with a depthwise 3x3 between the projections; the conv's
    zero padding is the block's only source of positional information."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dw = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, tokens, size):
        h, w = size
        x = self.fc1(tokens)
        b, n, c = x.shape
        x = x.transpose(1, 2).reshape(b, c, h, w)
        x = self.dw(x).flatten(2).transpose(1, 2)
        return self.fc2(F.gelu(x))


class TransformerBlock(nn.Module):
    """Pre-norm attention + conv-MLP block on channels-first feature maps.

    Output spatial dims and channel count always equal the input's.
    """

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0, sr_ratio: int = 1):
        super().__init__()
        self.dim = dim
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SpatialReductionAttention(dim, num_heads, sr_ratio)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = ConvFFN(dim, int(dim * mlp_ratio))

    def forward(self, x):
        if x.dim() != 4:
            raise DimensionError(f"expected a (B, C, H, W) map, got {tuple(x.shape)}")
        if x.size(1) != self.dim:
            raise ConfigurationError(f"block configured for {self.dim} channels, got {x.size(1)}")
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        tokens = tokens + self.attn(self.norm1(tokens), (h, w))
        tokens = tokens + self.ffn(self.norm2(tokens), (h, w))
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class PatchEmbed(nn.Module):
    """Overlapping strided convolution followed by layer norm."""

    def __init__(self, in_channels: int, out_channels: int, patch: int, stride: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, out_channels, patch, stride=stride, padding=patch // 2)
        self.norm = nn.LayerNorm(out_channels)

    def forward(self, x):
        x = self.proj(x)
        b, c, h, w = x.shape
        tokens = self.norm(x.flatten(2).transpose(1, 2))
        return tokens.transpose(1, 2).reshape(b, c, h, w)


class PyramidEncoder(nn.Module):
    """Strides 4/8/16/32 feature pyramid; each stage halves the grid."""

    def __init__(self, cfg: BackboneConfig, in_channels: int = 3):
        super().__init__()
        self.cfg = cfg
        self.in_channels = in_channels
        embeds, stages, norms = [], [], []
        prev = in_channels
        for i in range(4):
            width = cfg.encoder_channels[i]
            embeds.append(PatchEmbed(prev, width, 7 if i == 0 else 3, 4 if i == 0 else 2))
            stages.append(nn.ModuleList([
                TransformerBlock(width, cfg.attention_heads[i], cfg.mlp_ratios[i], cfg.sr_ratios[i])
                for _ in range(cfg.stage_depths[i])
            ]))
            norms.append(nn.LayerNorm(width))
            prev = width
        self.embeds = nn.ModuleList(embeds)
        self.stages = nn.ModuleList(stages)
        self.norms = nn.ModuleList(norms)

    def forward(self, images):
        if images.dim() != 4 or images.size(1) != self.in_channels:
            raise DimensionError(
                f"expected a (B, {self.in_channels}, H, W) batch, got {tuple(images.shape)}")
        for axis, extent in (("height", images.size(2)), ("width", images.size(3))):
            if extent % STRIDE_FACTOR:
                raise DimensionError(f"input {axis} {extent} not divisible by {STRIDE_FACTOR}")
        outputs = []
        x = images
        for embed, blocks, norm in zip(self.embeds, self.stages, self.norms):
            x = embed(x)
            for block in blocks:
                x = block(x)
            b, c, h, w = x.shape
            tokens = norm(x.flatten(2).transpose(1, 2))
            x = tokens.transpose(1, 2).reshape(b, c, h, w)
            outputs.append(x)
        return outputs
