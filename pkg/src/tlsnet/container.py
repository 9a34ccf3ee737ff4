"""Little-endian sectioned binary containers shared by datasets and checkpoints.

Layout::

    magic      4 bytes  (b"TLSD" dataset, b"TLSM" model)
    version    u16
    count      u32      number of sections
    sections   count x (u64 byte length, payload)
    crc        u32      CRC-32 (zlib polynomial) of every preceding byte

A text section payload is UTF-8 JSON with sorted keys and no insignificant
whitespace. An array section payload is::

    dtype  1 byte   b"d" float64 or b"q" int64
    ndim   u8
    dims   ndim x u64
    data   C-order little-endian values
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib

import numpy as np


class ContainerError(ValueError):
    """Base class for unreadable containers."""


class FormatError(ContainerError):
    """Wrong magic bytes or malformed section."""


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedError(ContainerError):
    pass


class ChecksumError(ContainerError):
    pass


_DTYPES = {b"d": np.dtype("<f8"), b"q": np.dtype("<i8")}


def text_section(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def array_section(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code, dt = b"d", _DTYPES[b"d"]
    elif arr.dtype.kind in "iu":
        code, dt = b"q", _DTYPES[b"q"]
    else:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    head = code + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dt).tobytes()


def pack(magic: bytes, version: int, sections: list[bytes]) -> bytes:
    body = bytearray(magic + struct.pack("<HI", version, len(sections)))
    for s in sections:
        body += struct.pack("<Q", len(s))
        body += s
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    return bytes(body)


def unpack(blob: bytes, magic: bytes, max_version: int) -> tuple[int, list[bytes]]:
    if len(blob) < 4 or blob[:4] != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {blob[:4]!r}")
    if len(blob) < 10:
        raise TruncatedError("file ends inside the header")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version > max_version:
        raise UnsupportedVersionError(f"format version {version} is newer than supported {max_version}")
    if version < 1:
        raise FormatError(f"invalid format version {version}")
    pos = 10
    spans = []
    for k in range(count):
        if pos + 8 > len(blob):
            raise TruncatedError(f"file ends before section {k}")
        (n,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if pos + n > len(blob):
            raise TruncatedError(f"section {k} needs {n} bytes, {len(blob) - pos} remain")
        spans.append((pos, pos + n))
        pos += n
    if pos + 4 > len(blob):
        raise TruncatedError("file ends before the checksum")
    if pos + 4 != len(blob):
        raise FormatError(f"{len(blob) - pos - 4} trailing bytes after checksum")
    (crc,) = struct.unpack_from("<I", blob, pos)
    if zlib.crc32(blob[:pos]) & 0xFFFFFFFF != crc:
        raise ChecksumError("CRC-32 mismatch")
    return version, [blob[a:b] for a, b in spans]


def read_text(section: bytes):
    try:
        return json.loads(section.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"malformed text section: {exc}") from exc


def read_array(section: bytes) -> np.ndarray:
    if len(section) < 2 or section[:1] not in _DTYPES:
        raise FormatError("malformed array section header")
    dt = _DTYPES[section[:1]]
    (ndim,) = struct.unpack_from("<B", section, 1)
    head = 2 + 8 * ndim
    if len(section) < head:
        raise FormatError("malformed array section header")
    shape = struct.unpack_from(f"<{ndim}Q", section, 2)
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    if len(section) - head != count * dt.itemsize:
        raise FormatError(f"array payload size does not match shape {shape}")
    arr = np.frombuffer(section, dtype=dt, offset=head, count=count).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True)


def atomic_write(path, data: bytes) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
