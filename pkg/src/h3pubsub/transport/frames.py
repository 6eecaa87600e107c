"""Frame encoding for protected packets.

A packet payload is a concatenation of frames.  ACK ranges follow the
largest-first gap/length layout so sparse receive sets stay compact.
Stream frames carry explicit offsets; FIN rides the type byte.
"""

from __future__ import annotations

from dataclasses import dataclass

from .varint import decode_varint, encode_varint

FT_PADDING = 0x00
FT_PING = 0x01
FT_ACK = 0x02
FT_STREAM = 0x08        # 0x09 with FIN bit
FT_MAX_STREAMS = 0x12
FT_CONNECTION_CLOSE = 0x1C
FT_HANDSHAKE_DONE = 0x1E


class MalformedFrame(ValueError):
    pass


@dataclass(frozen=True)
class Padding:
    length: int = 1


@dataclass(frozen=True)
class Ping:
    pass


@dataclass(frozen=True)
class Ack:
    largest: int
    ack_delay_ms: int
    # Inclusive (lo, hi) ranges, sorted by hi descending, non-adjacent.
    ranges: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class StreamFrame:
    stream_id: int
    offset: int
    data: bytes
    fin: bool = False


@dataclass(frozen=True)
class MaxStreams:
    limit: int


@dataclass(frozen=True)
class ConnectionClose:
    error_code: int
    reason: str = ""


@dataclass(frozen=True)
class HandshakeDone:
    pass


Frame = Padding | Ping | Ack | StreamFrame | MaxStreams | ConnectionClose | HandshakeDone


def ack_frame_from_pns(pns: list[tuple[int, int]], ack_delay_ms: int) -> Ack:
    ranges = tuple(sorted(pns, key=lambda r: r[1], reverse=True))
    return Ack(largest=ranges[0][1], ack_delay_ms=ack_delay_ms, ranges=ranges)


def encode_frame(frame: Frame) -> bytes:
    if isinstance(frame, Padding):
        return b"\x00" * frame.length
    if isinstance(frame, Ping):
        return bytes([FT_PING])
    if isinstance(frame, Ack):
        if not frame.ranges:
            raise MalformedFrame("ack with no ranges")
        out = bytearray([FT_ACK])
        out += encode_varint(frame.largest)
        out += encode_varint(frame.ack_delay_ms)
        out += encode_varint(len(frame.ranges) - 1)
        lo, hi = frame.ranges[0]
        if hi != frame.largest:
            raise MalformedFrame("first range must end at largest")
        out += encode_varint(hi - lo)
        prev_lo = lo
        for lo, hi in frame.ranges[1:]:
            gap = prev_lo - hi - 2  # QUIC gap convention
            if gap < 0:
                raise MalformedFrame("ack ranges overlap or are adjacent")
            out += encode_varint(gap)
            out += encode_varint(hi - lo)
            prev_lo = lo
        return bytes(out)
    if isinstance(frame, StreamFrame):
        out = bytearray([FT_STREAM | (0x01 if frame.fin else 0x00)])
        out += encode_varint(frame.stream_id)
        out += encode_varint(frame.offset)
        out += encode_varint(len(frame.data))
        out += frame.data
        return bytes(out)
    if isinstance(frame, MaxStreams):
        return bytes([FT_MAX_STREAMS]) + encode_varint(frame.limit)
    if isinstance(frame, ConnectionClose):
        reason = frame.reason.encode("utf-8")
        return (bytes([FT_CONNECTION_CLOSE]) + encode_varint(frame.error_code)
                + encode_varint(len(reason)) + reason)
    if isinstance(frame, HandshakeDone):
        return bytes([FT_HANDSHAKE_DONE])
    raise MalformedFrame(f"cannot encode {type(frame).__name__}")


def encode_frames(frames: list[Frame]) -> bytes:
    return b"".join(encode_frame(f) for f in frames)


def _decode_ack(data: bytes, pos: int) -> tuple[Ack, int]:
    largest, n = decode_varint(data, pos); pos += n
    delay, n = decode_varint(data, pos); pos += n
    extra_ranges, n = decode_varint(data, pos); pos += n
    first_len, n = decode_varint(data, pos); pos += n
    hi = largest
    lo = hi - first_len
    if lo < 0:
        raise MalformedFrame("ack range below zero")
    ranges = [(lo, hi)]
    for _ in range(extra_ranges):
        gap, n = decode_varint(data, pos); pos += n
        length, n = decode_varint(data, pos); pos += n
        hi = lo - gap - 2
        lo = hi - length
        if lo < 0:
            raise MalformedFrame("ack range below zero")
        ranges.append((lo, hi))
    return Ack(largest=largest, ack_delay_ms=delay, ranges=tuple(ranges)), pos


def decode_frames(payload: bytes) -> list[Frame]:
    frames: list[Frame] = []
    pos = 0
    n_total = len(payload)
    try:
        while pos < n_total:
            ftype = payload[pos]
            pos += 1
            if ftype == FT_PADDING:
                run = 1
                while pos < n_total and payload[pos] == FT_PADDING:
                    pos += 1
                    run += 1
                frames.append(Padding(length=run))
            elif ftype == FT_PING:
                frames.append(Ping())
            elif ftype == FT_ACK:
                ack, pos = _decode_ack(payload, pos)
                frames.append(ack)
            elif ftype in (FT_STREAM, FT_STREAM | 0x01):
                stream_id, n = decode_varint(payload, pos); pos += n
                offset, n = decode_varint(payload, pos); pos += n
                length, n = decode_varint(payload, pos); pos += n
                if pos + length > n_total:
                    raise MalformedFrame("stream data truncated")
                frames.append(StreamFrame(stream_id=stream_id, offset=offset,
                                          data=bytes(payload[pos:pos + length]),
                                          fin=bool(ftype & 0x01)))
                pos += length
            elif ftype == FT_MAX_STREAMS:
                limit, n = decode_varint(payload, pos); pos += n
                frames.append(MaxStreams(limit=limit))
            elif ftype == FT_CONNECTION_CLOSE:
                code, n = decode_varint(payload, pos); pos += n
                rlen, n = decode_varint(payload, pos); pos += n
                if pos + rlen > n_total:
                    raise MalformedFrame("close reason truncated")
                reason = bytes(payload[pos:pos + rlen]).decode("utf-8", "replace")
                pos += rlen
                frames.append(ConnectionClose(error_code=code, reason=reason))
            elif ftype == FT_HANDSHAKE_DONE:
                frames.append(HandshakeDone())
            else:
                raise MalformedFrame(f"unknown frame type 0x{ftype:02x}")
    except MalformedFrame:
        raise
    except ValueError as exc:
        raise MalformedFrame(str(exc)) from exc
    return frames


def is_ack_eliciting(frames: list[Frame]) -> bool:
    return any(not isinstance(f, (Ack, Padding, ConnectionClose))
               for f in frames)
