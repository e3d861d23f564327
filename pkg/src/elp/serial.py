"""Matrix (de)serialisation shared by vocabulary, embedding and checkpoint files.

A matrix travels as base64 of its little-endian float64 bytes next to its
shape, so JSON files round-trip bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np


def matrix_to_json(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {
        "shape": list(a.shape),
        "dtype": "float64",
        "order": "C",
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    if obj.get("dtype", "float64") != "float64":
        raise ValueError(f"unsupported dtype {obj.get('dtype')!r}")
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def write_matrix_sidecar(path: str | Path, a: np.ndarray, **header) -> None:
    """``<path>.bin`` raw little-endian float64 plus ``<path>.json`` header."""
    path = Path(path)
    a = np.ascontiguousarray(a, dtype="<f8")
    path.with_suffix(".bin").write_bytes(a.tobytes())
    meta = {"shape": list(a.shape), "dtype": "float64", "order": "C", **header}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_matrix_sidecar(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    a = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    return a.reshape(meta["shape"]).astype(np.float64), meta


def digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(np.ascontiguousarray(p).tobytes())
            h.update(str(p.shape).encode())
        elif isinstance(p, bytes):
            h.update(p)
        else:
            h.update(json.dumps(p, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]
