"""Checkpoint container: named float64 arrays plus metadata in one JSON document.

Text encoding stores every value as a shortest round-trip decimal, so
load -> save reproduces the file byte for byte. The compact variant keeps
the same schema but stores little-endian float64 bytes in base64.
"""

from __future__ import annotations

import base64
import hashlib
import json

import numpy as np

FORMAT = "formation-rl-checkpoint"
VERSION = 1


class CheckpointMismatch(ValueError):
    """A checkpoint tensor is missing or has the wrong shape."""


def _encode(arr: np.ndarray, encoding: str):
    flat = np.ascontiguousarray(arr, dtype=np.float64).ravel()
    if encoding == "text":
        return [float(x) for x in flat]
    return base64.b64encode(flat.astype("<f8").tobytes()).decode("ascii")


def _decode(data, shape, encoding: str) -> np.ndarray:
    if encoding == "text":
        arr = np.array(data, dtype=np.float64)
    else:
        arr = np.frombuffer(base64.b64decode(data), dtype="<f8").astype(np.float64)
    return arr.reshape(shape)


def save_checkpoint(path, tensors: dict, metadata: dict | None = None, binary: bool = False):
    encoding = "base64-f64le" if binary else "text"
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "encoding": encoding,
        "metadata": metadata or {},
        "tensors": {
            name: {"shape": list(np.shape(arr)), "data": _encode(np.asarray(arr), encoding)}
            for name, arr in tensors.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=False)
        fh.write("\n")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path} is not a {FORMAT} file")
    encoding = doc["encoding"]
    tensors = {name: _decode(t["data"], t["shape"], encoding) for name, t in doc["tensors"].items()}
    return tensors, doc["metadata"]


def policy_arrays(policy) -> dict[str, np.ndarray]:
    return {name: t.data for name, t in policy.parameters().items()}


def load_into(policy, tensors: dict[str, np.ndarray]):
    """Copy matching arrays into the policy's parameters, checking names and shapes."""
    params = policy.parameters()
    for name, t in params.items():
        if name not in tensors:
            raise CheckpointMismatch(f"checkpoint lacks tensor {name!r}")
        if tuple(tensors[name].shape) != t.shape:
            raise CheckpointMismatch(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)} in checkpoint, {t.shape} in model"
            )
    for name, t in params.items():
        t.data = np.array(tensors[name], dtype=np.float64)


def params_hash(tensors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes())
    return h.hexdigest()
