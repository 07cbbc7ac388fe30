"""Binary container format for tensors plus metadata.

Byte layout (all integers little-endian, independent of host endianness):

    magic       4 bytes   b"COSE"
    version     u32       currently 1
    entry_count u32       E
    E entries, each:
        name_len    u32
        name        name_len bytes, UTF-8, unique within the container
        rank        u32
        dims        rank x u64
        dtype       u32       1 = float32 little-endian
        payload     4 * prod(dims) bytes, row-major float32
    metadata_len    u32
    metadata        metadata_len bytes, UTF-8 JSON object (0 bytes = empty)

A container with no entries and empty metadata is exactly 16 bytes.
The same byte stream is produced for the same inputs; nothing
time- or host-dependent is written.  See docs/container-format.md for a
hex-annotated example.
"""

from __future__ import annotations

import io
import json
import struct
from typing import Mapping

import numpy as np

MAGIC = b"COSE"
VERSION = 1
DTYPE_FLOAT32 = 1

_MAX_RANK = 32
_MAX_NAME_LEN = 2**20
_MAX_METADATA_LEN = 2**30


class ContainerError(Exception):
    """Base class for all container read/write failures."""


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class DuplicateNameError(ContainerError):
    pass


class EntryFormatError(ContainerError):
    """Malformed entry header: bad rank, dtype tag, name bytes or sizes."""


class MetadataError(ContainerError):
    pass


class InvalidEntryError(ContainerError):
    """Write-side rejection; raised before any byte is produced."""


def _validate_entries(entries) -> list[tuple[str, np.ndarray]]:
    if isinstance(entries, Mapping):
        items = list(entries.items())
    else:
        items = [(name, arr) for name, arr in entries]
    seen = set()
    out = []
    for name, arr in items:
        if not isinstance(name, str):
            raise InvalidEntryError(f"entry name must be str, got {type(name).__name__}")
        if name in seen:
            raise InvalidEntryError(f"duplicate entry name {name!r}")
        seen.add(name)
        arr = np.asarray(arr)
        if not np.issubdtype(arr.dtype, np.floating) and not np.issubdtype(arr.dtype, np.integer):
            raise InvalidEntryError(f"entry {name!r}: non-numeric dtype {arr.dtype}")
        out.append((name, arr.astype("<f4", copy=False)))
    return out


def dumps(entries, metadata: dict | None = None) -> bytes:
    """Serialize entries and metadata to container bytes.

    ``entries`` is a mapping or iterable of (name, array); arrays are
    stored as float32.  ``metadata`` must be JSON-serializable; None or {}
    writes a zero-length metadata block.
    """
    items = _validate_entries(entries)
    if metadata:
        meta_bytes = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    else:
        meta_bytes = b""

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        name_b = name.encode("utf-8")
        buf.write(struct.pack("<I", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<I", arr.ndim))
        for d in arr.shape:
            buf.write(struct.pack("<Q", d))
        buf.write(struct.pack("<I", DTYPE_FLOAT32))
        buf.write(arr.tobytes(order="C"))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    return buf.getvalue()


def write(path, entries, metadata: dict | None = None) -> None:
    """Write a container file; all validation happens before the first byte."""
    data = dumps(entries, metadata)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise TruncatedError(f"container truncated while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    """Parse container bytes into (entries, metadata).

    Any malformed input raises a ContainerError subclass; arbitrary byte
    streams never raise anything else.
    """
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError("bad magic; not a container file")
    version = r.u32("version")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported container version {version}")
    count = r.u32("entry count")

    entries: dict[str, np.ndarray] = {}
    for i in range(count):
        ctx = f"entry {i}"
        name_len = r.u32(f"{ctx} name length")
        if name_len > _MAX_NAME_LEN:
            raise EntryFormatError(f"{ctx}: name length {name_len} too large")
        try:
            name = r.take(name_len, f"{ctx} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EntryFormatError(f"{ctx}: name is not valid UTF-8") from exc
        ctx = f"entry {i} ({name!r})"
        if name in entries:
            raise DuplicateNameError(f"duplicate entry name {name!r}")
        rank = r.u32(f"{ctx} rank")
        if rank > _MAX_RANK:
            raise EntryFormatError(f"{ctx}: rank {rank} exceeds limit {_MAX_RANK}")
        dims = []
        n_elems = 1
        for k in range(rank):
            d = r.u64(f"{ctx} dim {k}")
            dims.append(d)
            n_elems *= d
        dtype = r.u32(f"{ctx} dtype tag")
        if dtype != DTYPE_FLOAT32:
            raise EntryFormatError(f"{ctx}: unknown dtype tag {dtype}")
        payload_len = 4 * n_elems
        if payload_len > len(r.data) - r.pos:
            raise TruncatedError(f"{ctx}: payload truncated (want {payload_len} bytes)")
        payload = r.take(payload_len, f"{ctx} payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
        entries[name] = arr.copy()  # detach from the input buffer

    meta_len = r.u32("metadata length")
    if meta_len > _MAX_METADATA_LEN:
        raise MetadataError(f"metadata length {meta_len} too large")
    meta_bytes = r.take(meta_len, "metadata")
    if r.pos != len(r.data):
        raise EntryFormatError(f"{len(r.data) - r.pos} trailing bytes after metadata")
    if meta_len == 0:
        return entries, {}
    try:
        metadata = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MetadataError(f"metadata is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(metadata, dict):
        raise MetadataError("metadata document must be a JSON object")
    return entries, metadata


def read(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container file written by :func:`write`."""
    with open(path, "rb") as fh:
        data = fh.read()
    return loads(data)
