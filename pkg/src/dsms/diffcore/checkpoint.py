"""Named-tensor checkpoint files.

Layout: b"DSMS", u32 version, u32 header length, UTF-8 JSON header
(tensor name/dtype/shape/offset plus a flat string config block), then the
little-endian payloads back to back.
"""
import json
import struct

import numpy as np

MAGIC = b"DSMS"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors, config=None):
    entries = []
    payloads = []
    offset = 0
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value))
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset})
        payloads.append(raw)
        offset += len(raw)
    header = {
        "tensors": entries,
        "config": {str(k): str(v) for k, v in (config or {}).items()},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(head)))
        f.write(head)
        for raw in payloads:
            f.write(raw)


def load_checkpoint(path):
    """Return (dict name -> ndarray, config dict of strings)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a DSMS checkpoint")
    version, head_len = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[12:12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    base = 12 + head_len
    tensors = {}
    for e in header["tensors"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        count = int(np.prod(e["shape"], dtype=np.int64))
        start = base + e["offset"]
        end = start + count * dt.itemsize
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {e['name']!r}")
        arr = np.frombuffer(blob, dtype=dt, count=count, offset=start).reshape(e["shape"])
        tensors[e["name"]] = arr.astype(e["dtype"])
    return tensors, header.get("config", {})
