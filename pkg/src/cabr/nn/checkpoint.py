"""Single-file checkpoints: one JSON manifest line, then raw ``<f4`` arrays.

The manifest lists every array with its name, shape, dtype and byte offset
(relative to the first byte after the manifest's newline), plus a free-form
``meta`` object for network hyperparameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "cabr-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "dtype": "<f4", "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = {"format": MAGIC, "version": VERSION, "meta": meta or {}, "tensors": entries}
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointError(f"{path}: missing manifest line")
    try:
        manifest = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: manifest is not JSON ({exc})") from None
    if manifest.get("format") != MAGIC:
        raise CheckpointError(f"{path}: not a {MAGIC} file")
    body = memoryview(raw)[nl + 1 :]
    arrays = {}
    for entry in manifest["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if entry["dtype"] != "<f4":
            raise CheckpointError(f"{path}: tensor {entry['name']} has unsupported dtype {entry['dtype']}")
        if start + nbytes > len(body):
            raise CheckpointError(f"{path}: tensor {entry['name']} is truncated")
        arr = np.frombuffer(body[start : start + nbytes], dtype="<f4").reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float32)
    return arrays, manifest.get("meta", {})
