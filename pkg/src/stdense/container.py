"""Bit-exact named-tensor container.

Layout, little-endian throughout:

    magic  b"STDN"
    u16    format version (currently 1)
    u32    entry count
    entry* name length u16, ASCII name, rank u8, dims u64 each,
           dtype tag u8 (0 = float32 LE, 1 = float64 LE),
           raw row-major payload

Deliberately dumb so checkpoints and datasets stay parseable from any
language with a binary reader.
"""

import math
import struct

import numpy as np

from .tensor import Tensor

__all__ = [
    "ContainerError",
    "BadMagicError",
    "TruncatedFileError",
    "DuplicateNameError",
    "write_container",
    "read_container",
]

MAGIC = b"STDN"
VERSION = 1
_DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ContainerError(Exception):
    """Base class for container format violations."""


class BadMagicError(ContainerError):
    """File does not start with the container magic."""


class TruncatedFileError(ContainerError):
    """File ends before the declared content does."""


class DuplicateNameError(ContainerError):
    """The same entry name appears more than once."""


def _entry_bytes(name, arr):
    try:
        encoded = name.encode("ascii")
    except UnicodeEncodeError:
        raise ValueError(f"entry names must be ASCII, got {name!r}")
    if not 0 < len(encoded) < 2 ** 16:
        raise ValueError(f"entry name length out of range: {name!r}")
    if arr.dtype not in _DTYPE_TAGS:
        raise ValueError(f"{name}: only float32/float64 payloads, got {arr.dtype}")
    if arr.ndim >= 2 ** 8:
        raise ValueError(f"{name}: rank {arr.ndim} does not fit in one byte")
    head = struct.pack("<H", len(encoded)) + encoded
    head += struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    head += struct.pack("<B", _DTYPE_TAGS[arr.dtype])
    return head + np.ascontiguousarray(arr).tobytes()


def write_container(path, named):
    """Write name -> Tensor/ndarray entries (a mapping or (name, value)
    pairs); round-trip is bit-exact."""
    items = list(named.items()) if hasattr(named, "items") else list(named)
    seen = set()
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(items))]
    for name, value in items:
        if name in seen:
            raise DuplicateNameError(f"duplicate entry name {name!r}")
        seen.add(name)
        arr = value.data if isinstance(value, Tensor) else np.asarray(value)
        chunks.append(_entry_bytes(name, arr))
    blob = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(blob)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(
            f"expected {n} bytes for {what}, got {len(buf)}")
    return buf


def read_container(path):
    """Read a container back into a dict of name -> Tensor (no grad)."""
    out = {}
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, want {MAGIC!r}")
        version, count = struct.unpack("<HI", _read_exact(fh, 6, "header"))
        if version != VERSION:
            raise ContainerError(f"unsupported container version {version}")
        for i in range(count):
            nlen, = struct.unpack("<H", _read_exact(fh, 2, f"entry {i} name length"))
            name = _read_exact(fh, nlen, f"entry {i} name").decode("ascii")
            if name in out:
                raise DuplicateNameError(f"duplicate entry name {name!r}")
            rank, = struct.unpack("<B", _read_exact(fh, 1, f"{name} rank"))
            dims = struct.unpack(
                f"<{rank}Q", _read_exact(fh, 8 * rank, f"{name} dims"))
            tag, = struct.unpack("<B", _read_exact(fh, 1, f"{name} dtype"))
            if tag not in _TAG_DTYPES:
                raise ContainerError(f"{name}: unknown dtype tag {tag}")
            dtype = _TAG_DTYPES[tag]
            n_bytes = math.prod(dims) * dtype.itemsize
            payload = _read_exact(fh, n_bytes, f"{name} payload")
            arr = np.frombuffer(payload, dtype).reshape(dims).copy()
            out[name] = Tensor(arr, _check=False)
        trailing = fh.read(1)
        if trailing:
            raise ContainerError("trailing bytes after final entry")
    return out
