"""Self-describing checkpoint container.

Layout::

    b"CARLCKPT"            8-byte magic
    uint64 little-endian  header length H
    H bytes               UTF-8 JSON header (sorted keys)
    payload               concatenated row-major <f8 tensors

The header lists every tensor's name, shape, byte offset and length, plus
the RNG seed, the optimizer step counter and free-form metadata. No
timestamps are written, so identical state gives identical bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"CARLCKPT"


def save_checkpoint(path, tensors, seed, step, meta=None):
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": 1,
        "dtype": "<f8",
        "seed": int(seed),
        "step": int(step),
        "tensors": entries,
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    return path


def load_checkpoint(path):
    """Return ``(tensors, header)``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    base = 16 + hlen
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = blob[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise DataError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    return tensors, header
