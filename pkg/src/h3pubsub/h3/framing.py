"""Compact request/response framing for the topic API.

One request rides one stream and is finished with FIN; the response
comes back on the same stream.  Header compression is a fixed binary
layout instead of a dynamic table: method and lengths are varints, so
a small publish costs a handful of header bytes and decoding needs no
shared state between streams.

Subscription responses stay open: after the status varint the server
appends length-prefixed event records until the stream ends.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from ..transport.varint import (
    BufferShort,
    MalformedVarint,
    decode_varint,
    encode_varint,
)

MAX_PATH_LEN = 1024
MAX_AUTH_LEN = 1024
EVENT_HEADER = struct.Struct(">IQ")  # payload length, sequence number


class MalformedRequest(ValueError):
    pass


class Method(enum.IntEnum):
    HEAD = 1
    GET = 2
    PUT = 3
    POST = 4
    DELETE = 5


@dataclass(frozen=True)
class Request:
    method: int          # Method value, or an unknown code to be 405'd
    path: str
    auth: str | None     # Authorization header value, None when omitted
    body: bytes


def encode_request(req: Request) -> bytes:
    path = req.path.encode()
    auth = req.auth.encode() if req.auth is not None else b""
    if req.auth is not None and not auth:
        raise MalformedRequest("empty authorization header")
    out = bytearray()
    out += encode_varint(int(req.method))
    out += encode_varint(len(path)) + path
    out += encode_varint(len(auth)) + auth
    out += encode_varint(len(req.body)) + req.body
    return bytes(out)


def decode_request(data: bytes) -> Request:
    try:
        pos = 0
        method, n = decode_varint(data, pos); pos += n
        path_len, n = decode_varint(data, pos); pos += n
        if path_len > MAX_PATH_LEN or pos + path_len > len(data):
            raise MalformedRequest("bad path length")
        path = data[pos:pos + path_len].decode(); pos += path_len
        auth_len, n = decode_varint(data, pos); pos += n
        if auth_len > MAX_AUTH_LEN or pos + auth_len > len(data):
            raise MalformedRequest("bad auth length")
        auth = data[pos:pos + auth_len].decode() if auth_len else None
        pos += auth_len
        body_len, n = decode_varint(data, pos); pos += n
        if pos + body_len != len(data):
            raise MalformedRequest("body length mismatch")
        body = bytes(data[pos:pos + body_len])
    except (MalformedVarint, BufferShort, UnicodeDecodeError) as exc:
        raise MalformedRequest(str(exc)) from exc
    return Request(method=method, path=path, auth=auth, body=body)


def encode_response(status: int, body: bytes = b"") -> bytes:
    return encode_varint(status) + body


def decode_response_status(data: bytes) -> tuple[int, int]:
    """Status code and header size from a response prefix."""
    try:
        return decode_varint(data, 0)
    except (MalformedVarint, BufferShort) as exc:
        raise MalformedRequest(str(exc)) from exc


# ----------------------------------------------------------------------
# Topic resource paths

TOPIC_PREFIX = "/topics/"


def topic_path(name: str) -> str:
    return TOPIC_PREFIX + name


def parse_topic_path(path: str) -> str | None:
    if not path.startswith(TOPIC_PREFIX):
        return None
    name = path[len(TOPIC_PREFIX):]
    if not name or "/" in name:
        return None
    return name


# ----------------------------------------------------------------------
# Subscription event records


def encode_event_record(seq: int, payload: bytes) -> bytes:
    return EVENT_HEADER.pack(len(payload), seq) + payload


class EventRecordDecoder:
    """Incremental decoder for the subscription record stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self._buf.extend(data)
        out = []
        while len(self._buf) >= EVENT_HEADER.size:
            length, seq = EVENT_HEADER.unpack_from(self._buf)
            total = EVENT_HEADER.size + length
            if len(self._buf) < total:
                break
            payload = bytes(self._buf[EVENT_HEADER.size:total])
            del self._buf[:total]
            out.append((seq, payload))
        return out

    @property
    def residue(self) -> int:
        return len(self._buf)


# ----------------------------------------------------------------------
# Write buffer sizing


class WriteBufferPolicy(enum.Enum):
    # Fixed mirrors the common allocate-the-maximum behavior; dynamic
    # right-sizes to the request and is the footprint win measured here.
    FIXED = "fixed"
    DYNAMIC = "dynamic"


FIXED_WRITE_BUFFER = 8192
MIN_WRITE_BUFFER = 256


def write_buffer_size(policy: WriteBufferPolicy, request_size: int) -> int:
    if policy is WriteBufferPolicy.FIXED:
        return FIXED_WRITE_BUFFER
    size = MIN_WRITE_BUFFER
    while size < request_size:
        size *= 2
    return min(size, FIXED_WRITE_BUFFER)
