"""Checkpoint archive: dotted tensor names -> little-endian float32 arrays.

A checkpoint is a zip archive holding one raw .bin per tensor plus a
manifest that records the format version, tensor shapes, and file
mapping. Zip entries carry a fixed timestamp and no compression so that
identical state always produces identical bytes.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import ConfigurationError

FORMAT_VERSION = "m2s-ckpt/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _to_array(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    # astype, not ascontiguousarray: the latter promotes 0-dim to 1-d
    return np.asarray(value).astype("<f4", copy=False)


def save_checkpoint(path, state, metadata: dict | None = None) -> Path:
    """Write a name -> tensor mapping; names are stored sorted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(state)
    manifest = {"format": FORMAT_VERSION, "metadata": metadata or {}, "tensors": {}}
    blobs = []
    for index, name in enumerate(names):
        array = _to_array(state[name])
        filename = f"data/{index:06d}.bin"
        manifest["tensors"][name] = {"shape": list(array.shape), "dtype": "<f4", "file": filename}
        blobs.append((filename, array.tobytes()))
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w", zipfile.ZIP_STORED) as archive:
        info = zipfile.ZipInfo("manifest.json", date_time=_EPOCH)
        archive.writestr(info, json.dumps(manifest, sort_keys=True))
        for filename, blob in blobs:
            archive.writestr(zipfile.ZipInfo(filename, date_time=_EPOCH), blob)
    path.write_bytes(buffer.getvalue())
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as archive:
        try:
            manifest = json.loads(archive.read("manifest.json"))
        except KeyError:
            raise ConfigurationError(f"{path} has no manifest; not a checkpoint archive")
        version = manifest.get("format")
        if version != FORMAT_VERSION:
            raise ConfigurationError(
                f"{path}: format {version!r} is not {FORMAT_VERSION!r}")
        state = {}
        for name, entry in manifest["tensors"].items():
            raw = archive.read(entry["file"])
            state[name] = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
    return state


def checkpoint_metadata(path) -> dict:
    with zipfile.ZipFile(Path(path)) as archive:
        return json.loads(archive.read("manifest.json")).get("metadata", {})


def save_model(path, model: torch.nn.Module, metadata: dict | None = None) -> Path:
    return save_checkpoint(path, model.state_dict(), metadata)


def load_model(path, model: torch.nn.Module) -> torch.nn.Module:
    state = {name: torch.from_numpy(array) for name, array in load_checkpoint(path).items()}
    model.load_state_dict(state, strict=True)
    return model
