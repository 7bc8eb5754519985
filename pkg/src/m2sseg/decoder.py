"""Difficulty-conditioned transformer decoder and the prediction head.

Each stage doubles the working resolution, folds in the matching refined
skip, runs the shared transformer block, and gates its channels with a
vector derived from the embedded difficulty label.
"""
from __future__ import annotations

import json
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import TransformerBlock
from .difficulty import EASY, HARD
from .errors import ConfigurationError, ContractViolation, DimensionError
from .m2s_attention import resize

MAX_LABEL_COSINE = 0.99


def _cosine(a, b) -> float:
    return float(torch.dot(a, b) / (a.norm() * b.norm()))


class TextEmbeddingTable(nn.Module):
    """Frozen two-entry embedding for the difficulty vocabulary.

    Vectors come from an external JSON file keyed by the literal labels,
    or from a seeded unit-variance draw. The two vectors must not be
    nearly collinear; seeded draws are retried with the next seed until
    that holds.
    """

    LABELS = (HARD, EASY)

    def __init__(self, dim: int = 300, seed: int = 0, path=None):
        super().__init__()
        if path is not None:
            table = self._load(Path(path), dim)
            if _cosine(table[0], table[1]) >= MAX_LABEL_COSINE:
                raise ConfigurationError(
                    "embedding file vectors for 'hard' and 'easy' are nearly collinear")
        else:
            table = self._draw(dim, seed)
        self.register_buffer("table", table.float())

    @staticmethod
    def _load(path: Path, dim: int):
        raw = json.loads(path.read_text())
        rows = []
        for label in TextEmbeddingTable.LABELS:
            if label not in raw:
                raise ConfigurationError(f"embedding file missing key {label!r}")
            vec = torch.tensor(raw[label], dtype=torch.float32)
            if vec.dim() != 1 or vec.numel() != dim:
                raise ConfigurationError(
                    f"embedding for {label!r} must have length {dim}, got {tuple(vec.shape)}")
            rows.append(vec)
        return torch.stack(rows)

    @staticmethod
    def _draw(dim: int, seed: int):
        attempt = seed
        while True:
            gen = torch.Generator().manual_seed(attempt)
            table = torch.randn(2, dim, generator=gen)
            if _cosine(table[0], table[1]) < MAX_LABEL_COSINE:
                return table
            attempt += 1

    def forward(self, labels):
        indices = []
        for label in labels:
            if label not in self.LABELS:
                raise ContractViolation(f"unknown difficulty label {label!r}")
            indices.append(self.LABELS.index(label))
        return self.table[indices]


class DifficultyGate(nn.Module):
    """Channel gate computed from the difficulty text embedding."""

    def __init__(self, text_dim: int, channels: int):
        super().__init__()
        hidden = max(channels // 2, 1)
        self.fc1 = nn.Linear(text_dim, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def gate(self, text):
        return torch.sigmoid(self.fc2(F.relu(self.fc1(text))))

    def forward(self, x, text):
        return x * self.gate(text)[:, :, None, None]


class DecoderStage(nn.Module):
    """Upsample x2, fuse with the skip, transform, then gate."""

    def __init__(self, in_channels: int, skip_channels: int, width: int,
                 num_heads: int, mlp_ratio: float, sr_ratio: int,
                 depth: int, text_dim: int):
        super().__init__()
        self.fuse = nn.Conv2d(in_channels + skip_channels, width, 1)
        self.blocks = nn.ModuleList(
            [TransformerBlock(width, num_heads, mlp_ratio, sr_ratio) for _ in range(depth)])
        self.gate = DifficultyGate(text_dim, width)

    def forward(self, state, skip, text):
        expected = (2 * state.shape[-2], 2 * state.shape[-1])
        if tuple(skip.shape[-2:]) != expected:
            raise DimensionError(
                f"skip grid {tuple(skip.shape[-2:])} does not match upsampled state {expected}")
        x = torch.cat([resize(state, expected), skip], dim=1)
        x = self.fuse(x)
        for block in self.blocks:
            x = block(x)
        return self.gate(x, text)


class PredictionHead(nn.Module):
    """1x1 projection to a single probability map restored to full size."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, 1, 1)

    def forward(self, x, out_size):
        prob = torch.sigmoid(self.proj(x))
        return resize(prob, out_size).squeeze(1)
