"""Forgery localization with multi-spectral/multi-scale skip attention
and a difficulty-guided transformer decoder."""

from .config import (BackboneConfig, DataConfig, M2SConfig, ModelConfig, RunConfig,
                     TrainConfig, default_run_config, derive_seed,
                     model_config_for_preset, parse_config, serialize_config)
from .checkpoint import load_checkpoint, load_model, save_checkpoint, save_model
from .data import (ForgerySample, FoldAssignment, generate_synthetic, kfold,
                   load_corpus, save_samples, synth_copy_move, synth_splice)
from .difficulty import DifficultyVerdict, assess, classify, curvature, difficulty_score, sobel
from .errors import ConfigurationError, ContractViolation, DimensionError, TrainingDiverged
from .losses import LossBreakdown, bce, lr_at, total_loss
from .metrics import MetricsReport, binarize, dsc, evaluate, miou, report_csv
from .model import ForgeryLocalizer, ModelOutput, build_model, count_parameters
from .training import TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig", "ConfigurationError", "ContractViolation", "DataConfig",
    "DifficultyVerdict", "DimensionError", "FoldAssignment", "ForgeryLocalizer",
    "ForgerySample", "LossBreakdown", "M2SConfig", "MetricsReport", "ModelConfig",
    "ModelOutput", "RunConfig", "TrainConfig", "TrainResult", "TrainingDiverged",
    "assess", "bce", "binarize", "build_model", "classify", "count_parameters",
    "curvature", "default_run_config", "derive_seed", "difficulty_score", "dsc",
    "evaluate", "generate_synthetic", "kfold", "load_checkpoint", "load_corpus",
    "load_model", "lr_at", "miou", "model_config_for_preset", "parse_config",
    "report_csv", "save_checkpoint", "save_model", "save_samples",
    "serialize_config", "sobel", "synth_copy_move", "synth_splice", "total_loss",
    "train",
]
