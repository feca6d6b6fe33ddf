"""Portable checkpoints: a JSON header next to one little-endian float64 blob.

``<name>.json`` holds the caller's header plus a ``blobs`` table listing each
array's name, shape and element offset, in write order. ``<name>.bin`` is the
arrays concatenated as ``<f8`` in that same order. Headers are written with
sorted keys and no timestamps so identical inputs give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ArtifactIOError

BLOB_DTYPE = "<f8"


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    return path, path.with_suffix(".bin")


def write_checkpoint(path, header: dict, arrays: dict) -> Path:
    json_path, bin_path = _paths(path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    table = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=BLOB_DTYPE)
        table.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
        chunks.append(a.tobytes())
    blob = b"".join(chunks)
    full = dict(header)
    full["blobs"] = {"file": bin_path.name, "dtype": BLOB_DTYPE, "count": offset,
                     "sha256": hashlib.sha256(blob).hexdigest(), "arrays": table}
    try:
        bin_path.write_bytes(blob)
        json_path.write_text(json.dumps(full, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write checkpoint {json_path}: {exc}") from exc
    return json_path


def read_checkpoint(path) -> tuple[dict, dict]:
    json_path, _ = _paths(path)
    try:
        header = json.loads(json_path.read_text())
        bin_path = json_path.parent / header["blobs"]["file"]
        blob = bin_path.read_bytes()
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ArtifactIOError(f"cannot read checkpoint {json_path}: {exc}") from exc
    meta = header.pop("blobs")
    if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
        raise ArtifactIOError(f"{bin_path}: checksum mismatch")
    flat = np.frombuffer(blob, dtype=meta["dtype"])
    if flat.size != meta["count"]:
        raise ArtifactIOError(f"{bin_path}: expected {meta['count']} values, found {flat.size}")
    arrays = {}
    for entry in meta["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arrays[entry["name"]] = flat[start:start + size].astype(float).reshape(entry["shape"])
    return header, arrays
