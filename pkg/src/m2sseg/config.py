"""Configuration dataclasses, presets, and config-file handling."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigurationError

ALLOWED_DIVISORS = (1, 2, 4, 8, 16, 32)
DCT_MODES = ("standard", "freq_offset")
CURVATURE_MODES = ("simplified", "standard")
PRESETS = ("toy", "full")


def derive_seed(master: int, label: str) -> int:
    """Per-component seed keyed by a label, so adding a component never
    shifts the streams of existing ones."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") % (2**63 - 1)


def _as_tuple(value, length, name, kind=int):
    if not isinstance(value, (list, tuple)) or len(value) != length:
        raise ConfigurationError(f"{name} must be a sequence of {length} values")
    out = []
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigurationError(f"{name} entries must be numbers, got {v!r}")
        if kind is int and int(v) != v:
            raise ConfigurationError(f"{name} entries must be integers, got {v!r}")
        out.append(kind(v))
    return tuple(out)


@dataclass(frozen=True)
class BackboneConfig:
    """Channel plan and per-stage settings for the pyramid encoder and the
    transformer blocks reused inside the decoder."""

    encoder_channels: tuple = (64, 128, 320, 512)
    decoder_channels: tuple = (256, 128, 64)
    stage_depths: tuple = (3, 4, 6, 3)
    attention_heads: tuple = (1, 2, 5, 8)
    sr_ratios: tuple = (8, 4, 2, 1)
    mlp_ratios: tuple = (8.0, 8.0, 4.0, 4.0)
    decoder_heads: tuple = (8, 4, 2)
    decoder_sr_ratios: tuple = (2, 4, 8)
    decoder_mlp_ratios: tuple = (4.0, 8.0, 8.0)
    decoder_depth: int = 1
    scale_preset: str = "full"

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", _as_tuple(self.encoder_channels, 4, "encoder_channels"))
        object.__setattr__(self, "decoder_channels", _as_tuple(self.decoder_channels, 3, "decoder_channels"))
        object.__setattr__(self, "stage_depths", _as_tuple(self.stage_depths, 4, "stage_depths"))
        object.__setattr__(self, "attention_heads", _as_tuple(self.attention_heads, 4, "attention_heads"))
        object.__setattr__(self, "sr_ratios", _as_tuple(self.sr_ratios, 4, "sr_ratios"))
        object.__setattr__(self, "mlp_ratios", _as_tuple(self.mlp_ratios, 4, "mlp_ratios", float))
        object.__setattr__(self, "decoder_heads", _as_tuple(self.decoder_heads, 3, "decoder_heads"))
        object.__setattr__(self, "decoder_sr_ratios", _as_tuple(self.decoder_sr_ratios, 3, "decoder_sr_ratios"))
        object.__setattr__(self, "decoder_mlp_ratios", _as_tuple(self.decoder_mlp_ratios, 3, "decoder_mlp_ratios", float))
        for name in ("encoder_channels", "decoder_channels", "stage_depths", "attention_heads",
                     "sr_ratios", "decoder_heads", "decoder_sr_ratios"):
            if any(v < 1 for v in getattr(self, name)):
                raise ConfigurationError(f"{name} entries must be positive")
        if list(self.encoder_channels) != sorted(set(self.encoder_channels)):
            raise ConfigurationError("encoder_channels must be strictly increasing")
        for ch, heads in zip(self.encoder_channels, self.attention_heads):
            if ch % heads:
                raise ConfigurationError(f"stage width {ch} not divisible by {heads} heads")
        for ch, heads in zip(self.decoder_channels, self.decoder_heads):
            if ch % heads:
                raise ConfigurationError(f"decoder width {ch} not divisible by {heads} heads")
        if self.decoder_depth < 1:
            raise ConfigurationError("decoder_depth must be positive")
        if self.scale_preset not in PRESETS:
            raise ConfigurationError(f"scale_preset must be one of {PRESETS}")


@dataclass(frozen=True)
class M2SConfig:
    """Settings for the skip-connection attention block."""

    reduced_channels: int = 64
    target_divisor: int = 8
    num_frequencies: int = 16
    pyramid_levels: int = 3
    channel_decay: float = 2.0
    min_channels: int = 64
    min_height: int = 4
    min_width: int = 4
    bottleneck_reduction: int = 16
    dct_mode: str = "standard"

    def __post_init__(self):
        for name in ("reduced_channels", "num_frequencies", "pyramid_levels",
                     "min_channels", "min_height", "min_width", "bottleneck_reduction"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {value!r}")
        if self.target_divisor not in ALLOWED_DIVISORS:
            raise ConfigurationError(f"target_divisor must be one of {ALLOWED_DIVISORS}")
        if not self.channel_decay > 1.0:
            raise ConfigurationError("channel_decay must be > 1")
        if self.dct_mode not in DCT_MODES:
            raise ConfigurationError(f"dct_mode must be one of {DCT_MODES}")

    @property
    def total_channels(self) -> int:
        return 4 * self.reduced_channels


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to assemble the network."""

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    m2s: M2SConfig = field(default_factory=M2SConfig)
    text_dim: int = 300
    difficulty_threshold: float = 0.5
    curvature_mode: str = "simplified"
    curvature_eps: float = 1e-8
    embedding_file: str | None = None

    def __post_init__(self):
        if isinstance(self.text_dim, bool) or not isinstance(self.text_dim, int) or self.text_dim < 1:
            raise ConfigurationError("text_dim must be a positive integer")
        if not 0.0 < self.difficulty_threshold < 1.0:
            raise ConfigurationError("difficulty_threshold must lie in (0, 1)")
        if self.curvature_mode not in CURVATURE_MODES:
            raise ConfigurationError(f"curvature_mode must be one of {CURVATURE_MODES}")
        if not self.curvature_eps > 0:
            raise ConfigurationError("curvature_eps must be positive")


@dataclass(frozen=True)
class TrainConfig:
    initial_lr: float = 1e-4
    final_lr: float = 1e-6
    schedule: str = "cosine"
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    loss_epsilon: float = 1e-7
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    folds: int = 5

    def __post_init__(self):
        if not 0 < self.final_lr < self.initial_lr:
            raise ConfigurationError("need 0 < final_lr < initial_lr")
        if self.schedule != "cosine":
            raise ConfigurationError("only the cosine schedule is supported")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be positive")
        if not 0 < self.loss_epsilon < 0.5:
            raise ConfigurationError("loss_epsilon must lie in (0, 0.5)")
        if self.folds < 2:
            raise ConfigurationError("folds must be at least 2")


@dataclass(frozen=True)
class DataConfig:
    root: str | None = None
    resolution: int = 256

    def __post_init__(self):
        if self.resolution < 32 or self.resolution % 32:
            raise ConfigurationError("resolution must be a positive multiple of 32")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "full"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out_dir: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigurationError(f"preset must be one of {PRESETS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")


def toy_backbone_config() -> BackboneConfig:
    return BackboneConfig(
        encoder_channels=(16, 32, 48, 64),
        decoder_channels=(32, 16, 8),
        stage_depths=(1, 1, 1, 1),
        attention_heads=(1, 2, 3, 4),
        sr_ratios=(1, 1, 1, 1),
        mlp_ratios=(2.0, 2.0, 2.0, 2.0),
        decoder_heads=(2, 2, 1),
        decoder_sr_ratios=(1, 1, 1),
        decoder_mlp_ratios=(2.0, 2.0, 2.0),
        decoder_depth=1,
        scale_preset="toy",
    )


def toy_m2s_config() -> M2SConfig:
    return M2SConfig(
        reduced_channels=8,
        target_divisor=8,
        num_frequencies=4,
        pyramid_levels=2,
        channel_decay=2.0,
        min_channels=8,
        min_height=4,
        min_width=4,
        bottleneck_reduction=16,
    )


def model_config_for_preset(preset: str) -> ModelConfig:
    if preset == "full":
        return ModelConfig()
    if preset == "toy":
        toy = ModelConfig(backbone=toy_backbone_config(), m2s=toy_m2s_config())
        full = BackboneConfig()
        for t, f in zip(toy.backbone.encoder_channels, full.encoder_channels):
            if t > f:
                raise ConfigurationError("toy channels must not exceed the full preset stage-wise")
        return toy
    raise ConfigurationError(f"unknown preset {preset!r}")


def default_run_config(preset: str = "full") -> RunConfig:
    return RunConfig(preset=preset, model=model_config_for_preset(preset))


_MODEL_SECTIONS = {
    **{f.name: "backbone" for f in fields(BackboneConfig)},
    **{f.name: "m2s" for f in fields(M2SConfig)},
    **{f.name: "model" for f in fields(ModelConfig) if f.name not in ("backbone", "m2s")},
}

_SEQUENCE_FIELDS = {f.name for f in fields(BackboneConfig) if f.type == "tuple"}


def _check_scalar(path, value, template):
    if isinstance(template, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"config field {path}: expected bool, got {type(value).__name__}")
        return value
    if isinstance(template, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"config field {path}: expected int, got {type(value).__name__}")
        return value
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"config field {path}: expected number, got {type(value).__name__}")
        return float(value)
    if template is None or isinstance(template, str):
        if value is not None and not isinstance(value, str):
            raise ConfigurationError(f"config field {path}: expected string, got {type(value).__name__}")
        return value
    return value


def _apply_section(obj, updates: dict, prefix: str):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    patch = {}
    for key, value in updates.items():
        if key not in known:
            raise ConfigurationError(f"unknown config key: {prefix}{key}")
        if key in _SEQUENCE_FIELDS:
            patch[key] = value
        else:
            patch[key] = _check_scalar(f"{prefix}{key}", value, known[key])
    return replace(obj, **patch) if patch else obj


def run_config_from_dict(raw: dict) -> RunConfig:
    """Build a fully-defaulted RunConfig from a JSON-compatible dict.

    Unknown keys are rejected. Keys under "model" are routed to the
    backbone, attention, or model-level settings by field name.
    """
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be an object")
    raw = dict(raw)
    preset = raw.pop("preset", "full")
    if preset not in PRESETS:
        raise ConfigurationError(f"config field preset: must be one of {PRESETS}")
    cfg = default_run_config(preset)

    model_updates = raw.pop("model", {})
    if not isinstance(model_updates, dict):
        raise ConfigurationError("config field model: expected object")
    backbone, m2s, model_extra = {}, {}, {}
    for key, value in model_updates.items():
        section = _MODEL_SECTIONS.get(key)
        if section == "backbone":
            backbone[key] = value
        elif section == "m2s":
            m2s[key] = value
        elif section == "model":
            model_extra[key] = value
        else:
            raise ConfigurationError(f"unknown config key: model.{key}")
    model = cfg.model
    model = replace(model, backbone=_apply_section(model.backbone, backbone, "model."))
    model = replace(model, m2s=_apply_section(model.m2s, m2s, "model."))
    model = _apply_section(model, model_extra, "model.")

    train = _apply_section(cfg.train, raw.pop("train", {}), "train.")
    data = _apply_section(cfg.data, raw.pop("data", {}), "data.")
    out_dir = raw.pop("out_dir", cfg.out_dir)
    seed = raw.pop("seed", cfg.seed)
    if raw:
        raise ConfigurationError(f"unknown config key: {sorted(raw)[0]}")
    seed = _check_scalar("seed", seed, 0)
    out_dir = _check_scalar("out_dir", out_dir, None)
    return RunConfig(preset=preset, model=model, train=train, data=data, out_dir=out_dir, seed=seed)


def parse_config(path) -> RunConfig:
    """Load and validate a config file; referenced paths must exist."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from exc
    cfg = run_config_from_dict(raw)
    if cfg.data.root is not None and not Path(cfg.data.root).is_dir():
        raise ConfigurationError(f"data.root does not exist: {cfg.data.root}")
    if cfg.model.embedding_file is not None and not Path(cfg.model.embedding_file).is_file():
        raise ConfigurationError(f"model.embedding_file does not exist: {cfg.model.embedding_file}")
    return cfg


def serialize_config(cfg: RunConfig) -> dict:
    """Dict form that round-trips through run_config_from_dict."""
    model = {}
    for f in fields(BackboneConfig):
        value = getattr(cfg.model.backbone, f.name)
        model[f.name] = list(value) if isinstance(value, tuple) else value
    for f in fields(M2SConfig):
        model[f.name] = getattr(cfg.model.m2s, f.name)
    for f in fields(ModelConfig):
        if f.name not in ("backbone", "m2s"):
            model[f.name] = getattr(cfg.model, f.name)
    return {
        "preset": cfg.preset,
        "model": model,
        "train": {f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig)},
        "data": {f.name: getattr(cfg.data, f.name) for f in fields(DataConfig)},
        "out_dir": cfg.out_dir,
        "seed": cfg.seed,
    }


def write_config_snapshot(cfg: RunConfig, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "resolved_config.json"
    target.write_text(json.dumps(serialize_config(cfg), indent=2, sort_keys=True) + "\n")
    return target
