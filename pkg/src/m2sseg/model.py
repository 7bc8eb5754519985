"""Full network assembly and the end-to-end forward pass."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import PyramidEncoder
from .config import ModelConfig, derive_seed, model_config_for_preset
from .decoder import DecoderStage, PredictionHead, TextEmbeddingTable
from .difficulty import DifficultyVerdict, GlobalPriorHead, assess
from .m2s_attention import M2SAttention


@dataclass
class ModelOutput:
    mask: torch.Tensor                 # (B, H, W) probabilities
    prior: torch.Tensor                # (B, H/32, W/32) probabilities
    verdicts: list[DifficultyVerdict]  # one per batch sample


class ForgeryLocalizer(nn.Module):
    """Encoder, skip attention, difficulty-conditioned decoder, and heads.

    The difficulty verdict is computed once per sample from the detached
    prior map; the label is a discrete signal and carries no gradient.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        backbone, m2s = cfg.backbone, cfg.m2s
        reduced = m2s.reduced_channels
        self.encoder = PyramidEncoder(backbone)
        self.skip_attention = M2SAttention(backbone.encoder_channels, m2s)
        self.prior_head = GlobalPriorHead(reduced)
        self.text_table = TextEmbeddingTable(
            cfg.text_dim, seed=derive_seed(seed, "text-table"), path=cfg.embedding_file)
        self.entry = nn.Conv2d(reduced, reduced, 1)
        stages = []
        in_channels = reduced
        for i, width in enumerate(backbone.decoder_channels):
            stages.append(DecoderStage(
                in_channels, reduced, width,
                backbone.decoder_heads[i], backbone.decoder_mlp_ratios[i],
                backbone.decoder_sr_ratios[i], backbone.decoder_depth, cfg.text_dim))
            in_channels = width
        self.stages = nn.ModuleList(stages)
        self.head = PredictionHead(backbone.decoder_channels[-1])
        self._reset_parameters(derive_seed(seed, "model-init"))

    def _reset_parameters(self, seed: int):
        # truncated normal for projection weights, zeros for biases
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            for module in self.modules():
                if isinstance(module, (nn.Conv2d, nn.Linear)):
                    nn.init.trunc_normal_(module.weight, std=0.02)
                    if module.bias is not None:
                        nn.init.zeros_(module.bias)
                elif isinstance(module, nn.LayerNorm):
                    nn.init.ones_(module.weight)
                    nn.init.zeros_(module.bias)

    def forward(self, images, label_override: str | None = None) -> ModelOutput:
        stages = self.encoder(images)
        skips = self.skip_attention(stages)
        prior = self.prior_head(skips[3])
        with torch.no_grad():
            verdicts = assess(prior.detach(), threshold=self.cfg.difficulty_threshold,
                              eps=self.cfg.curvature_eps, mode=self.cfg.curvature_mode)
        if label_override is None:
            labels = [v.label for v in verdicts]
        else:
            labels = [label_override] * images.shape[0]
        text = self.text_table(labels)
        state = self.entry(skips[3])
        for stage, skip in zip(self.stages, (skips[2], skips[1], skips[0])):
            state = stage(state, skip, text)
        mask = self.head(state, images.shape[-2:])
        return ModelOutput(mask=mask, prior=prior, verdicts=verdicts)


def build_model(preset: str = "full", seed: int = 0) -> ForgeryLocalizer:
    return ForgeryLocalizer(model_config_for_preset(preset), seed=seed)


def count_parameters(cfg: ModelConfig) -> int:
    """Learnable scalar count of the assembled model."""
    model = ForgeryLocalizer(cfg, seed=0)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
