"""Single-file checkpoints: one JSON header line, then a little-endian
float32 payload.

The header carries the tensor manifest (name, shape, byte offset into the
payload), the run config and its hash, the iteration counter, optimizer
scalars, the serialized training RNG state, and enough dataset context (rig,
per-frame cameras/poses/sets) to render from the checkpoint alone.
Save -> load -> save is byte-identical: the manifest is sorted by name and
the header JSON is canonical.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_NAME = "bodyspace-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def rng_state_to_json(state: dict) -> dict:
    """numpy BitGenerator state with big ints stringified for JSON."""
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return v
    return conv(state)


def rng_state_from_json(state: dict) -> dict:
    def conv(v, key=None):
        if isinstance(v, dict):
            return {k: conv(x, k) for k, x in v.items()}
        if isinstance(v, str) and (v.isdigit() or (v.startswith("-") and v[1:].isdigit())):
            return int(v)
        return v
    return conv(state)


def save_checkpoint(path, meta: dict, tensors: dict) -> Path:
    """meta: JSON-ready dict (no 'tensors' key); tensors: name -> ndarray."""
    path = Path(path)
    manifest = []
    offset = 0
    names = sorted(tensors)
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    header = dict(meta)
    header["format"] = FORMAT_NAME
    header["format_version"] = FORMAT_VERSION
    header["tensors"] = manifest
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(line.encode())
        f.write(b"\n")
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Returns (meta, tensors). meta keeps every header field except the manifest."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"no checkpoint at {path}")
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"bad checkpoint header in {path}: {e}") from None
        if header.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path} is not a {FORMAT_NAME} file")
        payload = f.read()
    tensors = {}
    for entry in header.pop("tensors"):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        tensors[entry["name"]] = arr.reshape(shape).copy()
    return header, tensors
