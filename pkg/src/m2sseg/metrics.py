"""Overlap metrics, thresholding, and cross-fold report aggregation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def binarize(pred, threshold: float = 0.5) -> np.ndarray:
    """Pixelwise p >= threshold -> 1. Idempotent on binary input at 0.5."""
    if not 0.0 < threshold < 1.0:
        raise ConfigurationError("threshold must lie in (0, 1)")
    return (np.asarray(pred) >= threshold).astype(np.uint8)


def confusion(a, b) -> ConfusionCounts:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    tp = int(np.logical_and(a, b).sum())
    fp = int(np.logical_and(a, ~b).sum())
    fn = int(np.logical_and(~a, b).sum())
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=int(a.size - tp - fp - fn))


def dsc(a, b) -> float:
    """2*TP / (2*TP + FP + FN); 1.0 when both masks are empty."""
    c = confusion(a, b)
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2.0 * c.tp / denom


def miou(a, b) -> float:
    """TP / (TP + FP + FN); 1.0 when both masks are empty."""
    c = confusion(a, b)
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    dsc: float   # fraction in [0, 1]
    miou: float


@dataclass(frozen=True)
class MetricsReport:
    dataset: str
    folds: int
    per_fold: tuple
    dsc_mean: float   # percent
    dsc_std: float
    miou_mean: float
    miou_std: float


def _aggregate(dataset: str, per_fold: list[FoldMetrics]) -> MetricsReport:
    dscs = np.array([f.dsc for f in per_fold])
    ious = np.array([f.miou for f in per_fold])
    return MetricsReport(
        dataset=dataset,
        folds=len(per_fold),
        per_fold=tuple(per_fold),
        dsc_mean=float(dscs.mean() * 100.0),
        dsc_std=float(dscs.std() * 100.0),
        miou_mean=float(ious.mean() * 100.0),
        miou_std=float(ious.std() * 100.0),
    )


def evaluate(predictors, samples, assignment, threshold: float = 0.5,
             dataset: str = "dataset") -> MetricsReport:
    """Macro-averaged DSC/mIoU per fold, then mean and population std
    across folds, reported in percent.

    `predictors` maps fold index -> callable(sample) -> probability map.
    Every fold of the assignment must have a predictor.
    """
    per_fold = []
    for fold in range(assignment.k):
        if fold not in predictors:
            raise ConfigurationError(f"missing checkpoint for fold {fold}")
        ids = {sid for sid, f in assignment.fold_of.items() if f == fold}
        members = [s for s in samples if s.sample_id in ids]
        if not members:
            raise ConfigurationError(f"fold {fold} has no samples")
        predict = predictors[fold]
        dscs, ious = [], []
        for sample in members:
            pred = binarize(predict(sample), threshold)
            dscs.append(dsc(pred, sample.mask))
            ious.append(miou(pred, sample.mask))
        per_fold.append(FoldMetrics(fold=fold, dsc=float(np.mean(dscs)),
                                    miou=float(np.mean(ious))))
    return _aggregate(dataset, per_fold)


def report_csv(report: MetricsReport) -> str:
    """CSV rows per fold plus a mean (std) summary row, one decimal."""
    lines = ["dataset,fold,dsc,miou"]
    for fm in report.per_fold:
        lines.append(f"{report.dataset},{fm.fold},{fm.dsc * 100:.1f},{fm.miou * 100:.1f}")
    lines.append(
        f"{report.dataset},summary,"
        f"{report.dsc_mean:.1f} ({report.dsc_std:.1f}),"
        f"{report.miou_mean:.1f} ({report.miou_std:.1f})")
    return "\n".join(lines) + "\n"
