"""Self-describing binary container shared by datasets, motion files and checkpoints.

Layout (all integers little-endian u32)::

    magic (4 bytes) | version | header length | header CRC32 | header JSON | payload

The JSON header lists every array with its shape, byte offset into the
payload, byte count and CRC32, plus the CRC32 and size of the whole payload.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path
from typing import Any, Sequence

import numpy as np

FORMAT_VERSION = 1
DATASET_MAGIC = b"SGDS"
_PREFIX = struct.Struct("<4sIII")


class ContainerError(Exception):
    """Base class for container read/write failures."""

    def __init__(self, message: str, clip_id: str | None = None):
        super().__init__(f"[{clip_id}] {message}" if clip_id else message)
        self.clip_id = clip_id


class FormatError(ContainerError):
    """Wrong magic number or malformed header."""


class VersionError(ContainerError):
    """Unsupported container version."""


class ChecksumError(ContainerError):
    """Header or payload bytes do not match their recorded CRC32 / length."""


class PrecisionError(ContainerError):
    """Values cannot be stored at the container's precision without loss."""


def _owner(name: str) -> str | None:
    return name.split("/", 1)[0] if "/" in name else None


def write_container(
    path: str | os.PathLike,
    magic: bytes,
    header: dict[str, Any],
    arrays: Sequence[tuple[str, np.ndarray]],
    dtype: str = "<f4",
) -> dict[str, Any]:
    """Write arrays atomically; returns the full header that was stored.

    Array names of the form ``"<owner>/<field>"`` let readers report the owning
    clip id on failure. Storing float64 values at ``<f4`` requires them to be
    exactly representable.
    """
    if len(magic) != 4:
        raise FormatError("magic must be 4 bytes")
    dt = np.dtype(dtype)
    records, chunks, offset = [], [], 0
    for name, arr in arrays:
        arr = np.asarray(arr)
        stored = np.ascontiguousarray(arr, dtype=dt)
        if not np.array_equal(stored.astype(np.float64), arr.astype(np.float64)):
            raise PrecisionError(f"array {name!r} is not exactly representable as {dt}", _owner(name))
        raw = stored.tobytes()
        records.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    full = dict(header)
    full.update(
        dtype=dt.str,
        arrays=records,
        payload_bytes=len(payload),
        payload_crc32=zlib.crc32(payload),
    )
    head = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = _PREFIX.pack(magic, FORMAT_VERSION, len(head), zlib.crc32(head)) + head + payload

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return full


def read_container(
    path: str | os.PathLike, magic: bytes
) -> tuple[dict[str, Any], dict[str, np.ndarray]]:
    """Read and fully verify a container. Nothing is returned unless every check passes."""
    blob = Path(path).read_bytes()
    if len(blob) < _PREFIX.size:
        raise ChecksumError(f"file is {len(blob)} bytes, shorter than the fixed prefix")
    got_magic, version, head_len, head_crc = _PREFIX.unpack_from(blob)
    if got_magic != magic:
        raise FormatError(f"bad magic {got_magic!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise VersionError(f"container version {version} unsupported (expected {FORMAT_VERSION})")
    head = blob[_PREFIX.size : _PREFIX.size + head_len]
    if len(head) != head_len or zlib.crc32(head) != head_crc:
        raise ChecksumError("header checksum mismatch")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}") from None

    payload = blob[_PREFIX.size + head_len :]
    dt = np.dtype(header["dtype"])
    for rec in header["arrays"]:
        end = rec["offset"] + rec["nbytes"]
        if end > len(payload):
            raise ChecksumError(
                f"array {rec['name']!r} truncated ({len(payload)} of {end} payload bytes)",
                _owner(rec["name"]),
            )
    if len(payload) != header["payload_bytes"]:
        raise ChecksumError(
            f"payload is {len(payload)} bytes, header records {header['payload_bytes']}"
        )
    if zlib.crc32(payload) != header["payload_crc32"]:
        bad = next(
            (
                r["name"]
                for r in header["arrays"]
                if zlib.crc32(payload[r["offset"] : r["offset"] + r["nbytes"]]) != r["crc32"]
            ),
            None,
        )
        raise ChecksumError(
            "payload checksum mismatch" + (f" in array {bad!r}" if bad else ""),
            _owner(bad) if bad else None,
        )

    arrays = {}
    for rec in header["arrays"]:
        raw = payload[rec["offset"] : rec["offset"] + rec["nbytes"]]
        expected = int(np.prod(rec["shape"])) * dt.itemsize
        if len(raw) != expected:
            raise FormatError(f"array {rec['name']!r} has {len(raw)} bytes for shape {rec['shape']}",
                              _owner(rec["name"]))
        arrays[rec["name"]] = np.frombuffer(raw, dtype=dt).reshape(rec["shape"]).astype(np.float64)
    return header, arrays
