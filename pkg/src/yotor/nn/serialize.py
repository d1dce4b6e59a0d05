"""Single-file weight container.

Layout, in order:

1. magic bytes ``YTNW1\\n``
2. 8-byte little-endian unsigned manifest length
3. UTF-8 JSON manifest: ``{"meta": {...}, "tensors": [{"name", "dtype",
   "shape", "offset", "nbytes"}, ...]}`` with offsets relative to the
   start of the blob
4. raw little-endian tensor bytes, packed in manifest order

The manifest stays plain text so a container can be inspected with nothing
but ``head`` and a JSON pretty-printer.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"YTNW1\n"

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_weights(path, state: dict, meta: Optional[dict] = None) -> None:
    """Write named arrays to ``path`` in the container format above."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr.astype(_DTYPES[arr.dtype.name])).tobytes()
        entries.append({
            "name": name,
            "dtype": arr.dtype.name,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = json.dumps({"meta": meta or {}, "tensors": entries},
                          indent=2, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(manifest)))
        f.write(manifest)
        for raw in blobs:
            f.write(raw)


def load_weights(path) -> tuple:
    """Read a container; returns ``(dict name -> ndarray, meta dict)``."""
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a weight container (bad magic)")
    hdr_end = len(MAGIC) + 8
    (mlen,) = struct.unpack("<Q", data[len(MAGIC):hdr_end])
    manifest = json.loads(data[hdr_end:hdr_end + mlen].decode("utf-8"))
    blob = data[hdr_end + mlen:]
    state = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"])
        state[e["name"]] = arr.astype(e["dtype"])
    return state, manifest.get("meta", {})
