"""Variable-length integers: 2-bit length prefix, 1/2/4/8 byte forms."""

from __future__ import annotations

MAX_VARINT = (1 << 62) - 1

_THRESHOLDS = ((1 << 6, 1), (1 << 14, 2), (1 << 30, 4), (1 << 62, 8))


class MalformedVarint(ValueError):
    pass


class BufferShort(MalformedVarint):
    """Buffer ends inside the field."""


def varint_size(n: int) -> int:
    for limit, size in _THRESHOLDS:
        if n < limit:
            return size
    raise MalformedVarint(f"{n} exceeds 62-bit varint range")


def encode_varint(n: int) -> bytes:
    if n < 0:
        raise MalformedVarint("varints are unsigned")
    size = varint_size(n)
    prefix = {1: 0x00, 2: 0x40, 4: 0x80, 8: 0xC0}[size]
    raw = bytearray(n.to_bytes(size, "big"))
    raw[0] |= prefix
    return bytes(raw)


def decode_varint(data: bytes | memoryview, offset: int = 0) -> tuple[int, int]:
    """(value, bytes consumed) from data[offset:]."""
    if offset >= len(data):
        raise BufferShort("empty varint")
    first = data[offset]
    size = 1 << (first >> 6)
    if offset + size > len(data):
        raise BufferShort("truncated varint")
    value = first & 0x3F
    for i in range(1, size):
        value = (value << 8) | data[offset + i]
    return value, size
