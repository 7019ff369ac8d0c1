"""Checkpoint IO: a versioned JSON map of parameter name -> shape + values."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import Tensor

FORMAT = "activekg-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, params: dict[str, Tensor]) -> None:
    blob = {
        "format": FORMAT,
        "version": VERSION,
        "params": {
            name: {
                "shape": list(t.data.shape),
                "values": t.data.reshape(-1).tolist(),
            }
            for name, t in params.items()
        },
    }
    Path(path).write_text(json.dumps(blob))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    try:
        blob = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if blob.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {blob.get('version')!r}")
    out: dict[str, np.ndarray] = {}
    for name, rec in blob["params"].items():
        shape = tuple(rec["shape"])
        arr = np.asarray(rec["values"], dtype=np.float64)
        if arr.size != int(np.prod(shape)) if shape else arr.size != 1:
            raise CheckpointError(f"{path}: parameter {name!r} has {arr.size} values for shape {shape}")
        out[name] = arr.reshape(shape)
    return out


def load_into(params: dict[str, Tensor], path: str | Path) -> None:
    """Load a checkpoint into existing tensors. Any shape mismatch is fatal."""
    loaded = load_checkpoint(path)
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names do not match (missing {sorted(missing)}, unexpected {sorted(extra)})"
        )
    for name, t in params.items():
        arr = loaded[name]
        if arr.shape != t.data.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: checkpoint {arr.shape}, model {t.data.shape}"
            )
    for name, t in params.items():
        t.data[...] = loaded[name]
