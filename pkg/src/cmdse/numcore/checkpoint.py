"""Named-array checkpoint container.

Byte layout (all integers little-endian)::

    offset 0   8 bytes   magic b"CMDSECK1"
    offset 8   8 bytes   uint64 manifest length L
    offset 16  L bytes   UTF-8 JSON manifest:
                         {"version": 1, "arrays": [{"name", "shape", "offset"}, ...],
                          "meta": {...}}   (meta optional, free-form JSON)
    then       pad with zero bytes to the next multiple of 8
    data       float64 little-endian values, row-major; each array starts at
               data_start + offset, where offset is in bytes

The manifest is written with sorted keys and arrays in insertion order, so
equal inputs give byte-identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CMDSECK1"


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes(order="C"))
        offset += a.nbytes
    doc = {"version": 1, "arrays": entries}
    if meta is not None:
        doc["meta"] = meta
    manifest = json.dumps(doc, sort_keys=True).encode("utf-8")
    head = MAGIC + struct.pack("<Q", len(manifest)) + manifest
    head += b"\x00" * (-len(head) % 8)
    Path(path).write_bytes(head + b"".join(blobs))


def load_arrays(path) -> dict[str, np.ndarray]:
    return load_checkpoint(path)[0]


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Arrays plus the manifest's meta block (empty when absent)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror}") from None
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    if not isinstance(manifest, dict) or "arrays" not in manifest:
        raise CheckpointError(f"{path}: manifest has no array table")
    start = 16 + mlen
    start += -start % 8
    out = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        lo = start + e["offset"]
        hi = lo + 8 * count
        if hi > len(raw):
            raise CheckpointError(f"{path}: array {e['name']!r} runs past end of file")
        out[e["name"]] = np.frombuffer(raw[lo:hi], dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return out, manifest.get("meta", {})
