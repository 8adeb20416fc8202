"""Shared helpers for the little-endian binary container formats."""

from __future__ import annotations

import struct
from typing import BinaryIO


class FileFormatError(ValueError):
    """A binary container violated its format contract."""


class BadMagicError(FileFormatError):
    """Magic bytes or format version did not match."""


class TruncatedPayloadError(FileFormatError):
    """File ended before the payload declared in its header."""


class HeaderMismatchError(FileFormatError):
    """Payload disagrees with the header (stray bytes, wrong counts)."""


def read_exact(f: BinaryIO, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise TruncatedPayloadError(f"expected {n} bytes for {what}, got {len(data)}")
    return data


def expect_magic(f: BinaryIO, magic: bytes) -> None:
    data = f.read(len(magic))
    if data != magic:
        raise BadMagicError(f"expected magic {magic!r}, got {data!r}")


def expect_eof(f: BinaryIO) -> None:
    if f.read(1):
        raise HeaderMismatchError("trailing bytes after the final record")


def read_u8(f: BinaryIO, what: str) -> int:
    return read_exact(f, 1, what)[0]


def read_u32(f: BinaryIO, what: str) -> int:
    return struct.unpack("<I", read_exact(f, 4, what))[0]


def write_u8(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<B", value))


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))
