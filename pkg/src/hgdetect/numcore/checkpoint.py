"""Checkpoint format: JSON manifest + raw little-endian float64 arrays.

Layout: 8-byte little-endian header length, UTF-8 JSON header
{version, meta, tensors: [{name, shape}]}, then each array's raw '<f8'
bytes in manifest order.
"""

import json

import numpy as np

FORMAT_VERSION = 1


def save_checkpoint(path, arrays: dict, meta: dict = None) -> None:
    names = sorted(arrays)
    header = {
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (meta, {name: ndarray})."""
    with open(path, "rb") as f:
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')!r}")
        arrays = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return header["meta"], arrays
