"""Datagram layouts: the two handshake messages and protected packets.

CLIENT_HELLO is padded to a fixed 1200 bytes, the anti-amplification
floor, which also makes Initial datagrams recognizable by size on an
impaired link.  SERVER_HELLO carries the server's ephemeral share, its
transport parameters, its identity key, and a transcript signature.
Protected packets are type 0x03 with the connection id and a full
varint packet number in the clear; everything after that is AEAD
payload.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import PUBKEY_LEN, SIGNATURE_LEN
from .varint import decode_varint, encode_varint

PT_CLIENT_HELLO = 0x01
PT_SERVER_HELLO = 0x02
PT_ONE_RTT = 0x03

CONN_ID_LEN = 4
INITIAL_SIZE = 1200
MAX_PACKET_SIZE = 1200


class MalformedPacket(ValueError):
    pass


@dataclass(frozen=True)
class TransportParams:
    max_ack_delay_ms: int
    max_bidi_streams: int
    idle_timeout_ms: int

    def encode(self) -> bytes:
        return (encode_varint(self.max_ack_delay_ms)
                + encode_varint(self.max_bidi_streams)
                + encode_varint(self.idle_timeout_ms))

    @classmethod
    def decode(cls, data: bytes) -> TransportParams:
        try:
            pos = 0
            mad, n = decode_varint(data, pos); pos += n
            streams, n = decode_varint(data, pos); pos += n
            idle, n = decode_varint(data, pos); pos += n
        except ValueError as exc:
            raise MalformedPacket("bad transport params") from exc
        if pos != len(data):
            raise MalformedPacket("trailing bytes in transport params")
        return cls(max_ack_delay_ms=mad, max_bidi_streams=streams,
                   idle_timeout_ms=idle)


@dataclass(frozen=True)
class ClientHello:
    conn_id: bytes
    public_key: bytes
    params: TransportParams

    def encode(self) -> bytes:
        blob = self.params.encode()
        out = (bytes([PT_CLIENT_HELLO]) + self.conn_id + self.public_key
               + len(blob).to_bytes(2, "big") + blob)
        if len(out) > INITIAL_SIZE:
            raise MalformedPacket("client hello exceeds initial size")
        return out + b"\x00" * (INITIAL_SIZE - len(out))

    @classmethod
    def decode(cls, data: bytes) -> ClientHello:
        if len(data) < 1 + CONN_ID_LEN + PUBKEY_LEN + 2:
            raise MalformedPacket("client hello too short")
        pos = 1
        conn_id = bytes(data[pos:pos + CONN_ID_LEN]); pos += CONN_ID_LEN
        public = bytes(data[pos:pos + PUBKEY_LEN]); pos += PUBKEY_LEN
        blob_len = int.from_bytes(data[pos:pos + 2], "big"); pos += 2
        if pos + blob_len > len(data):
            raise MalformedPacket("client hello params truncated")
        params = TransportParams.decode(bytes(data[pos:pos + blob_len]))
        return cls(conn_id=conn_id, public_key=public, params=params)


@dataclass(frozen=True)
class ServerHello:
    conn_id: bytes
    public_key: bytes
    params: TransportParams
    identity_key: bytes
    signature: bytes

    def encode(self) -> bytes:
        return self.signed_portion() + self.signature

    def signed_portion(self) -> bytes:
        blob = self.params.encode()
        return (bytes([PT_SERVER_HELLO]) + self.conn_id + self.public_key
                + len(blob).to_bytes(2, "big") + blob + self.identity_key)

    @classmethod
    def decode(cls, data: bytes) -> ServerHello:
        floor = 1 + CONN_ID_LEN + PUBKEY_LEN + 2
        if len(data) < floor + PUBKEY_LEN + SIGNATURE_LEN:
            raise MalformedPacket("server hello too short")
        pos = 1
        conn_id = bytes(data[pos:pos + CONN_ID_LEN]); pos += CONN_ID_LEN
        public = bytes(data[pos:pos + PUBKEY_LEN]); pos += PUBKEY_LEN
        blob_len = int.from_bytes(data[pos:pos + 2], "big"); pos += 2
        end = pos + blob_len + PUBKEY_LEN + SIGNATURE_LEN
        if end != len(data):
            raise MalformedPacket("server hello length mismatch")
        params = TransportParams.decode(bytes(data[pos:pos + blob_len]))
        pos += blob_len
        identity = bytes(data[pos:pos + PUBKEY_LEN]); pos += PUBKEY_LEN
        signature = bytes(data[pos:pos + SIGNATURE_LEN])
        return cls(conn_id=conn_id, public_key=public, params=params,
                   identity_key=identity, signature=signature)


def encode_protected_header(conn_id: bytes, packet_number: int) -> bytes:
    return bytes([PT_ONE_RTT]) + conn_id + encode_varint(packet_number)


def decode_protected(data: bytes) -> tuple[bytes, int, bytes, bytes]:
    """(conn_id, packet_number, header_bytes, ciphertext)."""
    if len(data) < 1 + CONN_ID_LEN + 1 or data[0] != PT_ONE_RTT:
        raise MalformedPacket("not a protected packet")
    conn_id = bytes(data[1:1 + CONN_ID_LEN])
    try:
        pn, n = decode_varint(data, 1 + CONN_ID_LEN)
    except ValueError as exc:
        raise MalformedPacket("bad packet number") from exc
    header_len = 1 + CONN_ID_LEN + n
    return conn_id, pn, bytes(data[:header_len]), bytes(data[header_len:])


def packet_kind(data: bytes) -> int:
    if not data:
        raise MalformedPacket("empty datagram")
    kind = data[0]
    if kind not in (PT_CLIENT_HELLO, PT_SERVER_HELLO, PT_ONE_RTT):
        raise MalformedPacket(f"unknown packet type 0x{kind:02x}")
    return kind
