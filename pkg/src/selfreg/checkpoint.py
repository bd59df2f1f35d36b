"""Versioned, bit-exact checkpoint container.

Tensors are serialized as base64 of their little-endian float64 row-major
bytes inside canonical JSON (sorted keys, fixed separators), so identical
states always produce identical files and write/read round-trips are exact.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode_tensor(t: torch.Tensor) -> dict:
    arr = t.detach().numpy()
    if arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    data = np.ascontiguousarray(arr).astype("<f8", copy=False).tobytes()
    return {
        "dtype": "float64",
        "shape": list(arr.shape),
        "data": base64.b64encode(data).decode("ascii"),
    }


def _decode_tensor(spec: dict) -> torch.Tensor:
    raw = base64.b64decode(spec["data"])
    arr = np.frombuffer(raw, dtype="<f8").reshape(spec["shape"]).copy()
    return torch.tensor(arr, dtype=torch.float64)


def dumps(kind: str, config: dict, tensors: dict[str, torch.Tensor], extra: dict | None = None) -> str:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "tensors": {name: _encode_tensor(t) for name, t in sorted(tensors.items())},
        "extra": extra or {},
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def save(path: str | Path, kind: str, config: dict, tensors: dict[str, torch.Tensor], extra: dict | None = None) -> None:
    Path(path).write_text(dumps(kind, config, tensors, extra), encoding="utf-8")


def load(path: str | Path) -> tuple[str, dict, dict[str, torch.Tensor], dict]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")
    tensors = {name: _decode_tensor(spec) for name, spec in payload["tensors"].items()}
    return payload["kind"], payload["config"], tensors, payload.get("extra", {})


def sha256_of(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_of_tensors(tensors: dict[str, torch.Tensor]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode("utf-8"))
        h.update(_encode_tensor(tensors[name])["data"].encode("ascii"))
    return h.hexdigest()
