"""Command-line entry point.

Subcommands: train, eval, predict, score-difficulty, gen-synthetic,
count-params. Exit codes: 0 success, 1 validation error, 2 runtime
failure. Every subcommand that produces files writes a resolved-config
snapshot alongside them.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import checkpoint as ckpt
from .config import (RunConfig, default_run_config, parse_config, run_config_from_dict,
                     serialize_config, write_config_snapshot)
from .data import generate_synthetic, kfold, load_corpus, save_samples
from .difficulty import assess
from .errors import ConfigurationError, ContractViolation, DimensionError
from .metrics import evaluate, report_csv
from .model import ForgeryLocalizer, count_parameters
from .training import train


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _resolve_config(args) -> RunConfig:
    if getattr(args, "config", None):
        if getattr(args, "preset", None):
            raise ConfigurationError(
                '--preset cannot be combined with --config; set "preset" in the file')
        cfg = parse_config(args.config)
    else:
        cfg = default_run_config(getattr(args, "preset", None) or "full")
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    if getattr(args, "data", None):
        cfg = replace(cfg, data=replace(cfg.data, root=str(args.data)))
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=str(args.out))
    return cfg


def _load_image_for_model(path: Path, resolution: int) -> torch.Tensor:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if rgb.size != (resolution, resolution):
            rgb = rgb.resize((resolution, resolution), Image.BILINEAR)
        array = np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / 255.0
    return torch.from_numpy(array)[None]


def _load_prior_map(path: Path) -> torch.Tensor:
    if path.suffix == ".npy":
        array = np.load(path).astype(np.float32)
        if array.ndim != 2:
            raise DimensionError(f"expected a 2D map in {path}, got shape {array.shape}")
    else:
        with Image.open(path) as img:
            array = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
    return torch.from_numpy(np.clip(array, 0.0, 1.0))


def _cmd_count_params(args) -> int:
    cfg = _resolve_config(args)
    print(count_parameters(cfg.model))
    return 0


def _cmd_gen_synthetic(args) -> int:
    cfg = _resolve_config(args)
    if cfg.out_dir is None:
        raise ConfigurationError("gen-synthetic requires --out")
    samples = generate_synthetic(args.count, size=args.size, kind=args.type, seed=cfg.seed)
    save_samples(samples, cfg.out_dir)
    write_config_snapshot(cfg, cfg.out_dir)
    print(f"wrote {len(samples)} samples to {cfg.out_dir}")
    return 0


def _cmd_score_difficulty(args) -> int:
    cfg = _resolve_config(args)
    path = Path(args.source)
    if not path.is_file():
        raise ConfigurationError(f"input not found: {path}")
    if args.checkpoint:
        model = ForgeryLocalizer(cfg.model, seed=cfg.seed)
        ckpt.load_model(args.checkpoint, model)
        image = _load_image_for_model(path, cfg.data.resolution)
        with torch.no_grad():
            verdict = model(image).verdicts[0]
    else:
        prior = _load_prior_map(path)
        verdict = assess(prior, threshold=cfg.model.difficulty_threshold,
                         eps=cfg.model.curvature_eps, mode=cfg.model.curvature_mode)[0]
    print(f"s={verdict.score:.6f} label={verdict.label}")
    return 0


def _cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    image_path = Path(args.image)
    if not image_path.is_file():
        raise ConfigurationError(f"image not found: {image_path}")
    out_dir = Path(cfg.out_dir or ".")
    model = ForgeryLocalizer(cfg.model, seed=cfg.seed)
    ckpt.load_model(args.checkpoint, model)
    image = _load_image_for_model(image_path, cfg.data.resolution)
    with torch.no_grad():
        output = model(image)
    mask = np.round(output.mask[0].numpy() * 255.0).astype(np.uint8)
    out_dir.mkdir(parents=True, exist_ok=True)
    mask_path = out_dir / f"{image_path.stem}_mask.png"
    Image.fromarray(mask).save(mask_path)
    if cfg.out_dir is not None:
        write_config_snapshot(cfg, out_dir)
    verdict = output.verdicts[0]
    print(f"s={verdict.score:.6f} label={verdict.label}")
    print(f"mask written to {mask_path}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if cfg.out_dir is None:
        raise ConfigurationError("train requires --out")
    if cfg.data.root is None:
        raise ConfigurationError("train requires --data or data.root in the config")
    samples, skipped = load_corpus(cfg.data.root, cfg.data.resolution)
    for entry in skipped:
        print(f"skipped: {entry}", file=sys.stderr)
    assignment = kfold(samples, k=cfg.train.folds, seed=cfg.seed)
    val_ids = set(assignment.members(args.val_fold))
    train_samples = [s for s in samples if s.sample_id not in val_ids]
    val_samples = [s for s in samples if s.sample_id in val_ids]
    model = ForgeryLocalizer(cfg.model, seed=cfg.seed)
    write_config_snapshot(cfg, cfg.out_dir)
    result = train(model, train_samples, cfg.train, out_dir=cfg.out_dir,
                   val_samples=val_samples)
    last = result.history[-1]
    print(f"trained {last.epoch} epochs; final total loss {last.total:.6f}; "
          f"best val DSC {result.best_dsc:.4f} at epoch {result.best_epoch}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    if cfg.data.root is None:
        raise ConfigurationError("eval requires --data or data.root in the config")
    samples, _ = load_corpus(cfg.data.root, cfg.data.resolution)
    assignment = kfold(samples, k=cfg.train.folds, seed=cfg.seed)
    checkpoints_dir = Path(args.checkpoints)
    predictors = {}
    for fold in range(assignment.k):
        path = checkpoints_dir / f"fold{fold}.ckpt"
        if not path.is_file():
            raise ConfigurationError(f"missing checkpoint for fold {fold}: {path}")
        model = ForgeryLocalizer(cfg.model, seed=cfg.seed)
        ckpt.load_model(path, model)

        def predict(sample, model=model):
            with torch.no_grad():
                out = model(torch.from_numpy(sample.image)[None])
            return out.mask[0].numpy()

        predictors[fold] = predict
    dataset = args.dataset_name or Path(cfg.data.root).name
    report = evaluate(predictors, samples, assignment, dataset=dataset)
    csv_text = report_csv(report)
    if cfg.out_dir is not None:
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text(csv_text)
        write_config_snapshot(cfg, out_dir)
    print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="m2sseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, out_required=False):
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--preset", choices=("toy", "full"), help="model scale preset")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", type=Path, required=out_required, help="output directory")

    p = sub.add_parser("train", help="train a model on a corpus")
    common(p, out_required=True)
    p.add_argument("--data", type=Path, help="corpus root directory")
    p.add_argument("--val-fold", type=int, default=0, help="fold held out for validation")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="cross-fold evaluation from per-fold checkpoints")
    common(p)
    p.add_argument("--data", type=Path, help="corpus root directory")
    p.add_argument("--checkpoints", type=Path, required=True,
                   help="directory holding fold<k>.ckpt files")
    p.add_argument("--dataset-name", help="dataset label for the report")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="write a probability mask for one image")
    common(p)
    p.add_argument("image", type=Path, help="input image path")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("score-difficulty", help="difficulty verdict for an image or map")
    common(p)
    p.add_argument("source", type=Path, help="image, grayscale map, or .npy map")
    p.add_argument("--checkpoint", type=Path, help="run the model to produce the prior map")
    p.set_defaults(func=_cmd_score_difficulty)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic forgery corpus")
    common(p, out_required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--type", choices=("copy_move", "splice", "mixed"), default="mixed")
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("count-params", help="print the learnable parameter count")
    common(p)
    p.set_defaults(func=_cmd_count_params)
    return parser


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"m2sseg: {exc}", file=sys.stderr)
        return 1
    if getattr(args, "command", None) is None:
        print(parser.format_usage(), file=sys.stderr)
        return 1
    try:
        return args.func(args) or 0
    except (ConfigurationError, DimensionError, ContractViolation, UsageError) as exc:
        print(f"m2sseg: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"m2sseg: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> None:
    threads = os.environ.get("M2S_NUM_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"m2sseg: ignoring non-integer M2S_NUM_THREADS={threads!r}", file=sys.stderr)
    raise SystemExit(dispatch(sys.argv[1:] if argv is None else argv))
