"""Small helper for reading the package's binary file formats safely."""

from __future__ import annotations

import struct

import numpy as np

from .exceptions import FormatError, TruncatedFileError


class ByteReader:
    """Sequential reader over an in-memory byte string.

    Every read checks bounds and raises :class:`TruncatedFileError` with
    the expected vs. actual length instead of slicing silently short.
    """

    def __init__(self, data: bytes, context: str):
        self.data = data
        self.offset = 0
        self.context = context

    def take(self, n: int) -> bytes:
        end = self.offset + n
        if end > len(self.data):
            raise TruncatedFileError(end, len(self.data), self.context)
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        raw = self.take(itemsize * count)
        return np.frombuffer(raw, dtype=dtype, count=count).copy()

    def expect_end(self) -> None:
        if self.offset != len(self.data):
            raise FormatError(
                f"{self.context} has {len(self.data) - self.offset} trailing bytes"
            )
