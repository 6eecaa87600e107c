"""MQTT 3.1.1 packet codec, publisher subset.

Covers exactly the five packet types the publish-only baseline needs:
CONNECT, CONNACK, PUBLISH, PUBACK, DISCONNECT.  The remaining-length
field is the standard 7-bits-per-byte varint with continuation bit,
encoded minimally.  Everything else a peer could send decodes to a
typed error, never an unhandled exception.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

PROTOCOL_NAME = "MQTT"
PROTOCOL_LEVEL = 4
MAX_REMAINING_LENGTH = 268_435_455


class MalformedPacket(ValueError):
    pass


class UnsupportedType(MalformedPacket):
    """Well-formed MQTT type outside the implemented subset."""


class PacketType(enum.IntEnum):
    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    DISCONNECT = 14


# Recognized 3.1.1 types we deliberately do not implement.
_KNOWN_UNSUPPORTED = {5, 6, 7, 8, 9, 10, 11, 12, 13}


class ConnectReturnCode(enum.IntEnum):
    ACCEPTED = 0
    UNACCEPTABLE_PROTOCOL = 1
    IDENTIFIER_REJECTED = 2
    SERVER_UNAVAILABLE = 3
    BAD_CREDENTIALS = 4
    NOT_AUTHORIZED = 5


@dataclass(frozen=True)
class Connect:
    client_id: str
    username: str | None = None
    password: str | None = None
    keep_alive: int = 0
    clean_session: bool = True


@dataclass(frozen=True)
class Connack:
    return_code: ConnectReturnCode
    session_present: bool = False


@dataclass(frozen=True)
class Publish:
    topic: str
    payload: bytes
    qos: int = 0
    packet_id: int | None = None
    dup: bool = False
    retain: bool = False

    def __post_init__(self) -> None:
        if self.qos not in (0, 1):
            raise MalformedPacket(f"qos {self.qos} outside supported subset")
        if self.qos == 1 and not self.packet_id:
            raise MalformedPacket("qos 1 publish requires a nonzero packet id")
        if self.qos == 0 and self.packet_id is not None:
            raise MalformedPacket("qos 0 publish carries no packet id")


@dataclass(frozen=True)
class Puback:
    packet_id: int


@dataclass(frozen=True)
class Disconnect:
    pass


MqttPacket = Connect | Connack | Publish | Puback | Disconnect


def encode_remaining_length(n: int) -> bytes:
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise MalformedPacket(f"remaining length {n} out of range")
    out = bytearray()
    while True:
        n, digit = divmod(n, 128)
        out.append(digit | (0x80 if n else 0))
        if not n:
            return bytes(out)


def decode_remaining_length(buf: bytes, offset: int = 0) -> tuple[int, int] | None:
    """(value, bytes consumed) from buf[offset:], or None if incomplete."""
    value = 0
    for i in range(4):
        if offset + i >= len(buf):
            return None
        byte = buf[offset + i]
        value |= (byte & 0x7F) << (7 * i)
        if not byte & 0x80:
            # Trailing zero digit means a shorter encoding existed.
            if i > 0 and byte == 0:
                raise MalformedPacket("non-minimal remaining length")
            return value, i + 1
    raise MalformedPacket("remaining length longer than 4 bytes")


class _Reader:
    """Bounds-checked cursor over one packet body."""

    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        raw = self.take(2)
        return (raw[0] << 8) | raw[1]

    def take(self, n: int) -> bytes:
        if self.remaining() < n:
            raise MalformedPacket("truncated packet body")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def rest(self) -> bytes:
        return self.take(self.remaining())

    def string(self) -> str:
        raw = self.take(self.u16())
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedPacket("invalid utf-8 string") from exc

    def done(self) -> None:
        if self.remaining():
            raise MalformedPacket(f"{self.remaining()} trailing bytes in body")


def _string(value: str) -> bytes:
    raw = value.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise MalformedPacket("string exceeds 65535 bytes")
    return len(raw).to_bytes(2, "big") + raw


def _u16(value: int) -> bytes:
    if not 0 <= value <= 0xFFFF:
        raise MalformedPacket(f"u16 field {value} out of range")
    return value.to_bytes(2, "big")


def _frame(ptype: PacketType, flags: int, body: bytes) -> bytes:
    return bytes([(ptype << 4) | flags]) + encode_remaining_length(len(body)) + body


def encode_packet(p: MqttPacket) -> bytes:
    if isinstance(p, Connect):
        flags = 0x02 if p.clean_session else 0x00
        if p.username is not None:
            flags |= 0x80
        if p.password is not None:
            if p.username is None:
                raise MalformedPacket("password without username")
            flags |= 0x40
        body = (_string(PROTOCOL_NAME) + bytes([PROTOCOL_LEVEL, flags])
                + _u16(p.keep_alive) + _string(p.client_id))
        if p.username is not None:
            body += _string(p.username)
        if p.password is not None:
            body += _string(p.password)
        return _frame(PacketType.CONNECT, 0, body)
    if isinstance(p, Connack):
        return _frame(PacketType.CONNACK, 0,
                      bytes([0x01 if p.session_present else 0x00,
                             int(p.return_code)]))
    if isinstance(p, Publish):
        flags = (0x08 if p.dup else 0) | (p.qos << 1) | (0x01 if p.retain else 0)
        body = _string(p.topic)
        if p.qos:
            body += _u16(p.packet_id)
        return _frame(PacketType.PUBLISH, flags, body + p.payload)
    if isinstance(p, Puback):
        return _frame(PacketType.PUBACK, 0, _u16(p.packet_id))
    if isinstance(p, Disconnect):
        return _frame(PacketType.DISCONNECT, 0, b"")
    raise UnsupportedType(f"cannot encode {type(p).__name__}")


def _decode_connect(r: _Reader) -> Connect:
    if r.string() != PROTOCOL_NAME:
        raise MalformedPacket("bad protocol name")
    if r.u8() != PROTOCOL_LEVEL:
        raise MalformedPacket("unsupported protocol level")
    flags = r.u8()
    if flags & 0x01:
        raise MalformedPacket("reserved connect flag set")
    if flags & 0x04:
        raise UnsupportedType("will flag outside subset")
    keep_alive = r.u16()
    client_id = r.string()
    username = r.string() if flags & 0x80 else None
    password = r.string() if flags & 0x40 else None
    if password is not None and username is None:
        raise MalformedPacket("password flag without username flag")
    r.done()
    return Connect(client_id=client_id, username=username, password=password,
                   keep_alive=keep_alive, clean_session=bool(flags & 0x02))


def _decode_publish(r: _Reader, flags: int) -> Publish:
    qos = (flags >> 1) & 0x03
    if qos == 3:
        raise MalformedPacket("qos 3 is a protocol violation")
    if qos == 2:
        raise UnsupportedType("qos 2 outside subset")
    topic = r.string()
    if not topic:
        raise MalformedPacket("empty topic")
    packet_id = None
    if qos:
        packet_id = r.u16()
        if packet_id == 0:
            raise MalformedPacket("zero packet id on qos 1 publish")
    return Publish(topic=topic, payload=r.rest(), qos=qos, packet_id=packet_id,
                   dup=bool(flags & 0x08), retain=bool(flags & 0x01))


def decode_packet(data: bytes) -> tuple[MqttPacket, int]:
    """Decode one complete packet from the head of data.

    Returns (packet, bytes consumed).  Raises MalformedPacket when the
    buffer cannot possibly frame a packet; an incomplete prefix of a
    valid packet is also malformed here (stream reassembly belongs to
    StreamDecoder).
    """
    if not data:
        raise MalformedPacket("empty buffer")
    first = data[0]
    ptype_raw, flags = first >> 4, first & 0x0F
    header = decode_remaining_length(data, 1)
    if header is None:
        raise MalformedPacket("truncated remaining length")
    body_len, varint_len = header
    end = 1 + varint_len + body_len
    if len(data) < end:
        raise MalformedPacket("truncated packet body")
    r = _Reader(data[1 + varint_len:end])

    if ptype_raw in _KNOWN_UNSUPPORTED:
        raise UnsupportedType(f"packet type {ptype_raw} outside subset")
    if ptype_raw == PacketType.CONNECT:
        if flags:
            raise MalformedPacket("connect flags nibble must be 0")
        return _decode_connect(r), end
    if ptype_raw == PacketType.CONNACK:
        if flags:
            raise MalformedPacket("connack flags nibble must be 0")
        ack_flags = r.u8()
        if ack_flags & 0xFE:
            raise MalformedPacket("reserved connack flags set")
        code = r.u8()
        try:
            rc = ConnectReturnCode(code)
        except ValueError as exc:
            raise MalformedPacket(f"unknown connack code {code}") from exc
        r.done()
        return Connack(return_code=rc, session_present=bool(ack_flags & 1)), end
    if ptype_raw == PacketType.PUBLISH:
        return _decode_publish(r, flags), end
    if ptype_raw == PacketType.PUBACK:
        if flags:
            raise MalformedPacket("puback flags nibble must be 0")
        pid = r.u16()
        if pid == 0:
            raise MalformedPacket("zero packet id in puback")
        r.done()
        return Puback(packet_id=pid), end
    if ptype_raw == PacketType.DISCONNECT:
        if flags or body_len:
            raise MalformedPacket("disconnect carries no flags or body")
        return Disconnect(), end
    raise MalformedPacket(f"reserved packet type {ptype_raw}")


class StreamDecoder:
    """Incremental framing over an ordered byte stream."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[MqttPacket]:
        self._buf.extend(data)
        out: list[MqttPacket] = []
        while self._buf:
            header = decode_remaining_length(self._buf, 1) if len(self._buf) > 1 else None
            if header is None:
                break
            body_len, varint_len = header
            end = 1 + varint_len + body_len
            if len(self._buf) < end:
                break
            packet, consumed = decode_packet(bytes(self._buf[:end]))
            del self._buf[:consumed]
            out.append(packet)
        return out

    @property
    def buffered(self) -> int:
        return len(self._buf)
