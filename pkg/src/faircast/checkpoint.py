"""Binary container for named float64 arrays plus a JSON metadata block.

Layout, all little-endian:

    bytes 0..7    magic b"FCCKPT01"
    bytes 8..15   uint64 header length H
    bytes 16..16+H  UTF-8 JSON header
    remainder     concatenated raw float64 array payloads

The JSON header holds {"version": 1, "meta": {...}, "tensors": [...]}, where
each tensors entry is {"name", "shape", "offset", "count"} with offset and
count in float64 elements relative to the payload start.  Arrays round-trip
bit for bit; meta must be JSON-serializable.

The same container backs model checkpoints and prepared training data.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataError
from .fileio import write_bytes_atomic

MAGIC = b"FCCKPT01"


def save_container(path: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write arrays and metadata to ``path`` atomically."""
    index = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        # asarray (not ascontiguousarray) keeps 0-d shapes; tobytes() emits
        # C order for any memory layout.
        arr = np.asarray(arr, dtype=np.float64)
        index.append({"name": name, "shape": list(arr.shape),
                      "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"version": 1, "meta": meta, "tensors": index},
                        separators=(",", ":")).encode("utf-8")
    blob = MAGIC + len(header).to_bytes(8, "little") + header + b"".join(chunks)
    write_bytes_atomic(path, blob)


def load_container(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read back (arrays, meta) from a container file."""
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise DataError(f"not a container file (bad magic): {path}")
    hlen = int.from_bytes(blob[8:16], "little")
    if 16 + hlen > len(blob):
        raise DataError(f"truncated container header: {path}")
    try:
        header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt container header in {path}: {exc}") from exc
    if header.get("version") != 1:
        raise DataError(f"unsupported container version {header.get('version')!r} in {path}")
    payload = np.frombuffer(blob[16 + hlen:], dtype="<f8")
    arrays = {}
    for entry in header["tensors"]:
        start, count = entry["offset"], entry["count"]
        if start + count > payload.size:
            raise DataError(f"truncated container payload in {path}")
        arrays[entry["name"]] = payload[start:start + count].reshape(entry["shape"]).copy()
    return arrays, header["meta"]
