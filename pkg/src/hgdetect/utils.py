"""Seed derivation and hashing helpers shared across stages."""

import hashlib
import json
from pathlib import Path


def derive_seed(root_seed: int, *labels) -> int:
    """Derive a child seed from a root seed and a sequence of string/int labels.

    Stable across runs and platforms; collisions between distinct label
    sequences are astronomically unlikely (64-bit blake2 digest).
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(root_seed)).encode())
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little")


def stable_hash(obj) -> str:
    """Hex digest of a JSON-serializable object with sorted keys."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
