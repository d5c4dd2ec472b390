"""Deterministic checkpoint container.

Layout (all integers little-endian):

    bytes 0..7    magic b"TODCKPT1"
    bytes 8..11   uint32 header length H
    bytes 12..12+H  header JSON (UTF-8, sorted keys):
        {"version": 1, "kind": str, "meta": {...},
         "arrays": [{"name": str, "shape": [int], "offset": int}, ...]}
    remainder     concatenated row-major little-endian float64 array data,
                  in the order listed under "arrays"

Array names are sorted, so serialization is a pure function of the content:
identical parameters produce identical bytes, and load(save(p)) == p bitwise.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import MissingArtifactError, SchemaError

_MAGIC = b"TODCKPT1"


def serialize(arrays: dict[str, np.ndarray], kind: str, meta: dict | None = None) -> bytes:
    names = sorted(arrays)
    blobs = []
    entries = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"version": 1, "kind": kind, "meta": meta or {}, "arrays": entries},
        ensure_ascii=False, sort_keys=True, separators=(",", ":"),
    ).encode("utf-8")
    return _MAGIC + struct.pack("<I", len(header)) + header + b"".join(blobs)


def deserialize(data: bytes) -> tuple[dict[str, np.ndarray], str, dict]:
    if data[:8] != _MAGIC:
        raise SchemaError("not a todpipe checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    if header.get("version") != 1:
        raise SchemaError(f"unsupported checkpoint version {header.get('version')!r}")
    body = data[12 + hlen :]
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays, header["kind"], header["meta"]


def save(path: str | Path, arrays: dict[str, np.ndarray], kind: str,
         meta: dict | None = None) -> None:
    Path(path).write_bytes(serialize(arrays, kind, meta))


def load(path: str | Path, expect_kind: str | None = None) -> tuple[dict[str, np.ndarray], str, dict]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    arrays, kind, meta = deserialize(path.read_bytes())
    if expect_kind is not None and kind != expect_kind:
        raise SchemaError(f"expected {expect_kind!r} checkpoint, found {kind!r}")
    return arrays, kind, meta


def digest(arrays: dict[str, np.ndarray], kind: str, meta: dict | None = None) -> str:
    """sha256 over the canonical serialization."""
    return hashlib.sha256(serialize(arrays, kind, meta)).hexdigest()
