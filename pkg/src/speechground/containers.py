"""Self-describing binary containers: JSON header + flat float32 payload.

Used for encoder/manifold checkpoints and for sequential-feature sidecars.
Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then the concatenated float32 payload. Headers are serialized with sorted
keys so identical inputs produce identical bytes.
"""

from __future__ import annotations

import json
import struct

import numpy as np

FORMAT_VERSION = 1

_MAGIC_LEN = 8


class ContainerError(ValueError):
    """Malformed or truncated container file."""


def write_container(path, magic: bytes, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays with a metadata header.

    Arrays are stored little-endian float32 in sorted name order. `meta`
    must be JSON-serializable.
    """
    if len(magic) != _MAGIC_LEN:
        raise ValueError(f"magic must be {_MAGIC_LEN} bytes, got {len(magic)}")
    names = sorted(tensors)
    entries = []
    offset = 0
    payloads = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        payloads.append(arr.tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": entries,
        "total_elements": offset,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for chunk in payloads:
            fh.write(chunk)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    """Read back (meta, tensors). Tensors come out as float32 arrays."""
    with open(path, "rb") as fh:
        got = fh.read(_MAGIC_LEN)
        if got != magic:
            raise ContainerError(f"{path}: bad magic {got!r}, expected {magic!r}")
        raw = fh.read(8)
        if len(raw) != 8:
            raise ContainerError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<Q", raw)
        header_bytes = fh.read(header_len)
        if len(header_bytes) != header_len:
            raise ContainerError(f"{path}: truncated header")
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ContainerError(f"{path}: unreadable header: {exc}") from exc
        if header.get("format_version") != FORMAT_VERSION:
            raise ContainerError(
                f"{path}: unsupported format version {header.get('format_version')}"
            )
        payload = np.frombuffer(fh.read(), dtype="<f4")
    total = header["total_elements"]
    if payload.size != total:
        raise ContainerError(
            f"{path}: payload has {payload.size} elements, header declares {total}"
        )
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + size > total:
            raise ContainerError(f"{path}: tensor {entry['name']} out of bounds")
        tensors[entry["name"]] = payload[start : start + size].reshape(shape).copy()
    return header["meta"], tensors
