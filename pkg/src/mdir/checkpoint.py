"""Checkpoint container.

Layout::

    MAGIC (8 bytes) | header length (uint64 LE) | JSON header | blobs

The header is ``{"meta": ..., "blobs": [{"name", "offset", "length",
"shape"}, ...]}`` serialised with sorted keys; offsets are relative to the
start of the blob section and every blob is raw little-endian float32. The
same (arrays, meta) always produce the same bytes.
"""
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MDIRCKP1"
BLOB_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _encode(arrays, meta):
    directory, chunks, offset = [], [], 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name], dtype=BLOB_DTYPE, order="C")
        raw = a.tobytes()
        directory.append({"name": name, "offset": offset, "length": len(raw), "shape": list(a.shape)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "blobs": directory}, sort_keys=True,
                        separators=(",", ":"), allow_nan=False).encode()
    return b"".join([MAGIC, struct.pack("<Q", len(header)), header] + chunks)


def save_checkpoint(path, arrays, meta=None):
    """Write ``arrays`` (name -> float array) and a JSON-able ``meta`` dict."""
    path = Path(path)
    data = _encode(arrays, meta or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Return ``(arrays, meta)``; arrays are float32."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not an mdir checkpoint")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    base = 16 + hlen
    arrays = {}
    for blob in header["blobs"]:
        start = base + blob["offset"]
        if start + blob["length"] > len(data):
            raise CheckpointError(f"truncated blob {blob['name']!r} in {path}")
        buf = np.frombuffer(data, BLOB_DTYPE, blob["length"] // 4, start)
        arrays[blob["name"]] = buf.reshape(tuple(blob["shape"])).copy()
    return arrays, header["meta"]
