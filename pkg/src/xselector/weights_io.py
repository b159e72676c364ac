"""Versioned .npz container for model weights.

Layout: a `__meta__` JSON string (format version, model kind, config dict)
plus one array entry per parameter. Loaders check the kind so a policy file
cannot be read as a user model by mistake.
"""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT_VERSION = 1


class WeightsError(ValueError):
    """Unreadable or mismatched weights file."""


def save_weights(
    path: str | Path, kind: str, config: Mapping, arrays: Mapping[str, np.ndarray]
) -> None:
    meta = json.dumps({"format_version": FORMAT_VERSION, "kind": kind, "config": dict(config)})
    payload = {name: np.asarray(arr) for name, arr in arrays.items()}
    buffer = io.BytesIO()
    np.savez(buffer, __meta__=np.frombuffer(meta.encode("utf-8"), dtype=np.uint8), **payload)
    Path(path).write_bytes(buffer.getvalue())


def load_weights(path: str | Path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(Path(path)) as data:
        if "__meta__" not in data:
            raise WeightsError(f"{path}: missing weights metadata")
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        arrays = {name: data[name] for name in data.files if name != "__meta__"}
    if meta.get("format_version") != FORMAT_VERSION:
        raise WeightsError(f"{path}: unsupported format version {meta.get('format_version')}")
    if meta.get("kind") != kind:
        raise WeightsError(f"{path}: expected {kind} weights, found {meta.get('kind')}")
    return meta["config"], arrays
