"""Corpus IO, synthetic forgery generation, and k-fold split management.

Corpus layout: <root>/images/<id>.<ext> paired with <root>/masks/<id>.png;
masks are 8-bit single-channel, 0 = authentic, 255 = forged.

Synthetic samples are built from seeded multi-octave value noise and are
exactly reproducible: the image is quantized to 8 bits so a save/load
round trip through PNG is lossless.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .config import derive_seed
from .errors import ConfigurationError

COPY_MOVE = "copy_move"
SPLICE = "splice"
UNKNOWN = "unknown"
AREA_BOUNDS = (0.02, 0.30)

_TYPE_PREFIXES = {"cm": COPY_MOVE, "sp": SPLICE}


@dataclass
class ForgerySample:
    image: np.ndarray   # float32 (3, H, W) in [0, 1]
    mask: np.ndarray    # uint8 (H, W) in {0, 1}
    forgery_type: str
    sample_id: str


def _bilinear_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    gh, gw = grid.shape[:2]
    ys = (np.arange(out_h) + 0.5) * gh / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * gw / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, gh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, gw - 1)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    ty = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    tx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = grid[y0][:, x0] * (1 - tx) + grid[y0][:, x1] * tx
    bottom = grid[y1][:, x0] * (1 - tx) + grid[y1][:, x1] * tx
    return top * (1 - ty) + bottom * ty


def _value_noise(rng: np.random.Generator, size: int, octaves: int = 4) -> np.ndarray:
    """Seeded multi-octave value noise, quantized to uint8 RGB (H, W, 3)."""
    acc = np.zeros((size, size, 3))
    amplitude, total = 1.0, 0.0
    for octave in range(octaves):
        cells = min(2 ** (octave + 2), size)
        grid = rng.random((cells, cells, 3))
        acc += amplitude * _bilinear_upsample(grid, size, size)
        total += amplitude
        amplitude *= 0.55
    return np.round(acc / total * 255.0).astype(np.uint8)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    # Andrew monotone chain; points (N, 2) as (x, y)
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def _polygon_mask(vertices: np.ndarray, size: int) -> np.ndarray:
    canvas = Image.new("L", (size, size), 0)
    ImageDraw.Draw(canvas).polygon([(float(x), float(y)) for x, y in vertices], fill=255)
    return np.asarray(canvas) > 0


def _convex_region(rng: np.random.Generator, size: int,
                   bounds=AREA_BOUNDS) -> np.ndarray:
    """Random convex polygon mask with area fraction inside `bounds`."""
    lo, hi = bounds
    for _ in range(200):
        target = rng.uniform(lo * 2.0, hi * 0.8)
        radius = min(size * math.sqrt(target / (0.75 * math.pi)), size * 0.45)
        cx = rng.uniform(radius + 1, size - radius - 1)
        cy = rng.uniform(radius + 1, size - radius - 1)
        angles = rng.uniform(0, 2 * math.pi, 12)
        radii = rng.uniform(0.4 * radius, radius, 12)
        points = np.stack([cx + radii * np.cos(angles), cy + radii * np.sin(angles)], axis=1)
        mask = _polygon_mask(_convex_hull(points), size)
        fraction = mask.mean()
        if lo <= fraction <= hi:
            return mask
    raise RuntimeError("failed to sample a polygon region within the area bounds")


def _transform(patch: np.ndarray, flip: bool, quarter_turns: int) -> np.ndarray:
    if flip:
        patch = np.flip(patch, axis=1)
    return np.ascontiguousarray(np.rot90(patch, quarter_turns, axes=(0, 1)))


def _bbox(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    return ys.min(), ys.max() + 1, xs.min(), xs.max() + 1


def _check_size(size: int):
    if size < 32:
        raise ConfigurationError(f"synthetic sample size must be >= 32, got {size}")


def synth_copy_move(seed: int, size: int = 256, with_provenance: bool = False):
    """Copy a convex region of a textured background to a non-overlapping
    offset, optionally flipped and rotated by quarter turns. The mask
    marks the pasted region only."""
    _check_size(size)
    rng = np.random.default_rng(derive_seed(seed, "copy-move"))
    background = _value_noise(rng, size)
    for _ in range(50):
        region = _convex_region(rng, size)
        y0, y1, x0, x1 = _bbox(region)
        patch = background[y0:y1, x0:x1]
        local = region[y0:y1, x0:x1]
        flip = bool(rng.integers(0, 2))
        quarter_turns = int(rng.integers(0, 4))
        patch_t = _transform(patch, flip, quarter_turns)
        local_t = _transform(local, flip, quarter_turns)
        th, tw = local_t.shape
        placement = None
        for _ in range(200):
            dy = int(rng.integers(0, size - th + 1))
            dx = int(rng.integers(0, size - tw + 1))
            if not (region[dy:dy + th, dx:dx + tw] & local_t).any():
                placement = (dy, dx)
                break
        if placement is None:
            continue
        dy, dx = placement
        image = background.copy()
        image[dy:dy + th, dx:dx + tw][local_t] = patch_t[local_t]
        mask = np.zeros((size, size), dtype=np.uint8)
        mask[dy:dy + th, dx:dx + tw][local_t] = 1
        sample = ForgerySample(
            image=np.ascontiguousarray(image.transpose(2, 0, 1)).astype(np.float32) / 255.0,
            mask=mask,
            forgery_type=COPY_MOVE,
            sample_id=f"cm-{seed:08d}",
        )
        if with_provenance:
            provenance = {
                "source_mask": region,
                "source_bbox": (y0, y1, x0, x1),
                "flip": flip,
                "quarter_turns": quarter_turns,
                "dest_offset": (dy, dx),
            }
            return sample, provenance
        return sample
    raise RuntimeError("could not place a non-overlapping copy-move region")


def synth_splice(seed: int, size: int = 256, with_provenance: bool = False):
    """Composite a region of an independently generated donor texture into
    the host; the mask marks the donor footprint exactly.

    The donor is drawn from a different palette than the host, as donor
    material in a real splice comes from a different image."""
    _check_size(size)
    rng = np.random.default_rng(derive_seed(seed, "splice"))
    host = _value_noise(rng, size, octaves=4)
    tint = rng.uniform(0.0, 255.0, size=3)
    donor = np.round(0.45 * _value_noise(rng, size, octaves=6) + 0.55 * tint).astype(np.uint8)
    region = _convex_region(rng, size)
    image = host.copy()
    image[region] = donor[region]
    sample = ForgerySample(
        image=np.ascontiguousarray(image.transpose(2, 0, 1)).astype(np.float32) / 255.0,
        mask=region.astype(np.uint8),
        forgery_type=SPLICE,
        sample_id=f"sp-{seed:08d}",
    )
    if with_provenance:
        return sample, {"host": host, "donor": donor, "footprint": region}
    return sample


def generate_synthetic(count: int, size: int = 256, kind: str = "mixed",
                       seed: int = 0) -> list[ForgerySample]:
    if kind not in (COPY_MOVE, SPLICE, "mixed"):
        raise ConfigurationError(f"unknown synthetic type {kind!r}")
    samples = []
    for i in range(count):
        sample_seed = seed + i
        if kind == COPY_MOVE or (kind == "mixed" and i % 2 == 0):
            samples.append(synth_copy_move(sample_seed, size))
        else:
            samples.append(synth_splice(sample_seed, size))
    return samples


def save_samples(samples, root) -> None:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for sample in samples:
        rgb = np.round(sample.image.transpose(1, 2, 0) * 255.0).astype(np.uint8)
        Image.fromarray(rgb).save(root / "images" / f"{sample.sample_id}.png")
        Image.fromarray(sample.mask * np.uint8(255)).save(root / "masks" / f"{sample.sample_id}.png")


def _read_image(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except OSError as exc:
        raise RuntimeError(f"unreadable file: {path}") from exc


def _read_mask(path: Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            return img.convert("L")
    except OSError as exc:
        raise RuntimeError(f"unreadable file: {path}") from exc


def _type_from_id(sample_id: str) -> str:
    prefix = sample_id.split("-", 1)[0]
    return _TYPE_PREFIXES.get(prefix, UNKNOWN)


def load_corpus(root, resolution: int = 256):
    """Load paired image/mask files sorted by id.

    Images are bilinearly resized to the target resolution; masks are
    nearest-neighbor resized then binarized at 0.5. Unpaired files go to
    the skipped-files report instead of failing the load.
    Returns (samples, skipped).
    """
    root = Path(root)
    images_dir, masks_dir = root / "images", root / "masks"
    if not images_dir.is_dir():
        raise ConfigurationError(f"corpus has no images directory: {images_dir}")
    skipped = []
    samples = []
    image_stems = set()
    for path in sorted(images_dir.iterdir()):
        if path.name.startswith(".") or not path.is_file():
            continue
        image_stems.add(path.stem)
        mask_path = masks_dir / f"{path.stem}.png"
        if not mask_path.is_file():
            skipped.append(f"images/{path.name}: no matching mask")
            continue
        img = _read_image(path)
        msk = _read_mask(mask_path)
        if img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        if msk.size != (resolution, resolution):
            msk = msk.resize((resolution, resolution), Image.NEAREST)
        image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
        mask = (np.asarray(msk, dtype=np.float32) / 255.0 >= 0.5).astype(np.uint8)
        samples.append(ForgerySample(image=image, mask=mask,
                                     forgery_type=_type_from_id(path.stem),
                                     sample_id=path.stem))
    if masks_dir.is_dir():
        for path in sorted(masks_dir.iterdir()):
            if path.name.startswith(".") or not path.is_file():
                continue
            if path.stem not in image_stems:
                skipped.append(f"masks/{path.name}: no matching image")
    return samples, skipped


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of: dict
    seed: int

    def members(self, fold: int):
        return sorted(sid for sid, f in self.fold_of.items() if f == fold)

    def counts(self):
        sizes = [0] * self.k
        for fold in self.fold_of.values():
            sizes[fold] += 1
        return sizes


def kfold(samples_or_ids, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Seeded shuffle then round-robin assignment; fold sizes differ by
    at most one."""
    ids = [s if isinstance(s, str) else s.sample_id for s in samples_or_ids]
    if k < 2:
        raise ConfigurationError("k must be at least 2")
    if len(ids) < k:
        raise ConfigurationError(f"need at least {k} samples for {k} folds, got {len(ids)}")
    if len(set(ids)) != len(ids):
        raise ConfigurationError("sample ids must be unique")
    order = sorted(ids)
    random.Random(seed).shuffle(order)
    return FoldAssignment(k=k, fold_of={sid: i % k for i, sid in enumerate(order)}, seed=seed)
