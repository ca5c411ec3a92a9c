"""Binary array records and JSON manifests.

Record layout (all integers little-endian):

    magic  b"ARGT"
    u32    format version (currently 1)
    u32    array count
    per array, in lexicographic name order:
        u32    name length in bytes
        bytes  utf-8 name
        u32    ndim
        u64[]  shape (ndim entries)
        f64[]  payload, little-endian, C order

Only float64 payloads exist on the wire; integer metadata lives in the
manifests. Writes are canonical (sorted names), so equal content means
equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import RecordError

MAGIC = b"ARGT"
VERSION = 1
_MAX_NDIM = 32


def record_bytes(arrays: Mapping[str, np.ndarray]) -> bytes:
    names = sorted(arrays)
    if len(set(names)) != len(names):
        raise RecordError("duplicate array names")
    parts = [MAGIC, struct.pack("<II", VERSION, len(names))]
    for name in names:
        if not name:
            raise RecordError("array names must be non-empty")
        arr = np.asarray(arrays[name])
        if arr.dtype.kind not in "fiub":
            raise RecordError(f"array {name!r} has unsupported dtype {arr.dtype}")
        arr = arr.astype("<f8", copy=False)  # tobytes() emits C order
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def parse_record(buf: bytes) -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(k: int, what: str) -> memoryview:
        nonlocal pos
        if pos + k > len(view):
            raise RecordError(f"record truncated while reading {what}")
        chunk = view[pos : pos + k]
        pos += k
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise RecordError("bad magic bytes; not an array record")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise RecordError(f"unsupported record version {version}")

    out: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", take(4, f"array {i} name length"))
        try:
            name = bytes(take(name_len, f"array {i} name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RecordError(f"array {i} name is not valid utf-8") from exc
        if not name:
            raise RecordError(f"array {i} has an empty name")
        if name in out:
            raise RecordError(f"duplicate array name {name!r}")
        (ndim,) = struct.unpack("<I", take(4, f"{name} ndim"))
        if ndim > _MAX_NDIM:
            raise RecordError(f"array {name!r} claims {ndim} dimensions")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, f"{name} shape"))
        size = 1
        for s in shape:
            size *= s
        payload = take(8 * size, f"{name} payload")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    if pos != len(view):
        raise RecordError(f"{len(view) - pos} trailing bytes after last array")
    return out


def write_record(path, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(record_bytes(arrays))


def read_record(path) -> dict[str, np.ndarray]:
    return parse_record(Path(path).read_bytes())


def write_manifest(path, payload: dict) -> None:
    """Canonical JSON: sorted keys, no timestamps, trailing newline."""
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def read_manifest(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RecordError(f"malformed manifest {path}: {exc}") from exc
