"""Canonical binary encoding: length-prefixed fields, big-endian integers.

Every encoder here has exactly one valid byte representation per value and
every decoder rejects anything else, so digests and signatures are stable.
"""
import hashlib
import math
import struct

from .errors import DecodeError

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")


def u8(value):
    return bytes((value,))


def u32(value):
    return _U32.pack(value)


def u64(value):
    return _U64.pack(value)


def f64(value):
    return _F64.pack(value)


def lp(data):
    """Length-prefix a byte string."""
    return _U32.pack(len(data)) + data


def sha256(*parts):
    """Digest over the length-prefixed concatenation of ``parts``."""
    h = hashlib.sha256()
    for part in parts:
        h.update(_U32.pack(len(part)))
        h.update(part)
    return h.digest()


class Reader:
    """Cursor over a byte string; every read is bounds-checked."""

    __slots__ = ("data", "pos")

    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n):
        end = self.pos + n
        if n < 0 or end > len(self.data):
            raise DecodeError(f"truncated input at offset {self.pos}")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def u8(self):
        return self.take(1)[0]

    def u32(self):
        return _U32.unpack(self.take(4))[0]

    def u64(self):
        return _U64.unpack(self.take(8))[0]

    def f64(self):
        value = _F64.unpack(self.take(8))[0]
        if math.isnan(value):
            raise DecodeError("NaN is not a canonical float")
        return value

    def lp(self, max_len=None):
        n = self.u32()
        if max_len is not None and n > max_len:
            raise DecodeError(f"field of {n} bytes exceeds limit {max_len}")
        return self.take(n)

    def flag(self):
        value = self.u8()
        if value not in (0, 1):
            raise DecodeError(f"flag byte must be 0 or 1, got {value}")
        return bool(value)

    def finish(self):
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")
