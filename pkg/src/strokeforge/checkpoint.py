"""Parameter checkpoint file format.

Layout (version tag SFCKPT1):

    bytes 0..7   magic b"SFCKPT1\\n"
    bytes 8..15  little-endian uint64: header length in bytes
    header       UTF-8 JSON {"tensors": [{"name", "shape", "offset"}...],
                             "meta": {...}}
    payload      raw little-endian float32 data; each tensor starts at its
                 manifest byte offset (relative to the payload start)
"""

import json

import numpy as np

MAGIC = b"SFCKPT1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays, meta=None):
    """Write a name -> array map (cast to float32) plus optional metadata."""
    entries = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())  # tobytes is C-order regardless of layout
        offset += arr.nbytes
    header = json.dumps({"tensors": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path):
    """Read a checkpoint; returns (name -> float32 array, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return arrays, header.get("meta", {})
