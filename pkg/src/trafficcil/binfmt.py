"""Little-endian helpers shared by the checkpoint and memory file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Raised when a binary artifact is truncated, foreign, or inconsistent."""


_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def dtype_code(dtype) -> int:
    width = np.dtype(dtype).itemsize
    if width not in _DTYPES or np.dtype(dtype).kind != "f":
        raise FormatError(f"unsupported parameter dtype {dtype}")
    return width


def dtype_from_code(code: int) -> np.dtype:
    try:
        return _DTYPES[code]
    except KeyError:
        raise FormatError(f"unknown dtype width {code}") from None


class Writer:
    def __init__(self, fh: BinaryIO):
        self.fh = fh

    def pack(self, fmt: str, *values) -> None:
        self.fh.write(struct.pack("<" + fmt, *values))

    def text(self, s: str) -> None:
        raw = s.encode("utf-8")
        self.pack("I", len(raw))
        self.fh.write(raw)

    def array(self, a: np.ndarray, dtype) -> None:
        self.fh.write(np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


class Reader:
    def __init__(self, fh: BinaryIO):
        self.fh = fh

    def read(self, n: int) -> bytes:
        raw = self.fh.read(n)
        if len(raw) != n:
            raise FormatError(f"truncated file: wanted {n} bytes, got {len(raw)}")
        return raw

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        out = struct.unpack(fmt, self.read(struct.calcsize(fmt)))
        return out[0] if len(out) == 1 else out

    def text(self) -> str:
        return self.read(self.unpack("I")).decode("utf-8")

    def array(self, shape: tuple[int, ...], dtype) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        count = int(np.prod(shape)) if shape else 1
        return np.frombuffer(self.read(count * dt.itemsize), dtype=dt).reshape(shape).astype(
            dt.newbyteorder("=")
        )

    def expect_eof(self) -> None:
        if self.fh.read(1):
            raise FormatError("trailing bytes after end of record")


def check_magic(reader: Reader, magic: bytes, version: int) -> None:
    got = reader.read(len(magic))
    if got != magic:
        raise FormatError(
            f"bad magic {got!r}: expected {magic.decode()} format version {version}"
        )
    got_version = reader.unpack("I")
    if got_version != version:
        raise FormatError(
            f"unsupported {magic.decode()} format version {got_version}, expected {version}"
        )
