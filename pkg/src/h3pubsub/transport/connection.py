"""Connection state machine: handshake, streams, acks, recovery, close.

One class serves both roles.  A client drives the handshake with a
padded CLIENT_HELLO it retransmits on a doubling deadline seeded from
the initial RTT guess; a server is born established, answering with a
signed SERVER_HELLO it resends on duplicate hellos.  After key
derivation both sides exchange protected packets carrying frames.

Sending is synchronous with the event loop tick that caused it: a
stream write assembles and emits datagrams inline, which keeps virtual
clock runs bit-for-bit reproducible.

Acks: a packet is acknowledged either when two ack-eliciting packets
are pending or when the local max_ack_delay timer fires, and every
outgoing packet piggybacks the pending ack state for free.

Recovery: packet-threshold 3 reordering on ack receipt plus a probe
timeout that declares the oldest in-flight packet lost and doubles.
Frames from lost packets are re-queued, never the packet bytes.  A
NewReno-ish window (40 KB initial, halve on loss epoch) gates data.

Close: the initiator flushes, sends CONNECTION_CLOSE, and waits for
the peer's close in reply, retransmitting up to three probe intervals.
The responder echoes one close and lingers to re-echo against a lost
reply.  Both record conn_closed when their part completes.
"""

from __future__ import annotations

import asyncio
import enum
import json
import logging
import os
from collections.abc import Callable
from dataclasses import dataclass

from ..events import (
    EV_CONN_CLOSED,
    EV_CONN_START,
    EV_FIRST_INITIAL_SENT,
    EV_HANDSHAKE_DONE,
    EndpointEventLog,
)
from ..governor import StreamBudget
from ..tuning import TuningProfile
from . import crypto, packets
from .frames import (
    Ack,
    ConnectionClose,
    Frame,
    MaxStreams,
    Padding,
    Ping,
    StreamFrame,
    ack_frame_from_pns,
    decode_frames,
    encode_frames,
    is_ack_eliciting,
)
from .packets import (
    INITIAL_SIZE,
    MAX_PACKET_SIZE,
    ClientHello,
    ServerHello,
    TransportParams,
)
from .varint import varint_size

log = logging.getLogger(__name__)

INITIAL_CWND = 40 * 1024
MIN_CWND = 2 * MAX_PACKET_SIZE
PACKET_REORDER_THRESHOLD = 3
AEAD_TAG_LEN = 16
PTO_GRANULARITY_MS = 10.0

ERR_NO_ERROR = 0
ERR_PROTOCOL = 1
ERR_STREAM_LIMIT = 4


class TransportError(Exception):
    pass


class HandshakeTimeout(TransportError):
    pass


class ConnectionClosedError(TransportError):
    pass


class State(enum.Enum):
    IDLE = "idle"
    HANDSHAKING = "handshaking"
    ESTABLISHED = "established"
    CLOSING = "closing"      # we initiated, waiting for peer close
    DRAINING = "draining"    # peer initiated, we echoed
    CLOSED = "closed"


class Side(enum.Enum):
    CLIENT = "client"
    SERVER = "server"


@dataclass
class SentPacket:
    pn: int
    frames: list[Frame]
    size: int
    time_sent_ms: float
    ack_eliciting: bool


class _RecvRanges:
    """Received packet numbers as merged inclusive ranges."""

    def __init__(self) -> None:
        self._ranges: list[list[int]] = []  # sorted ascending [lo, hi]

    def add(self, pn: int) -> bool:
        """Insert pn; False when already present."""
        rs = self._ranges
        for i, (lo, hi) in enumerate(rs):
            if lo <= pn <= hi:
                return False
            if pn == hi + 1:
                rs[i][1] = pn
                if i + 1 < len(rs) and rs[i + 1][0] == pn + 1:
                    rs[i][1] = rs[i + 1][1]
                    del rs[i + 1]
                return True
            if pn == lo - 1:
                rs[i][0] = pn
                return True
            if pn < lo:
                rs.insert(i, [pn, pn])
                return True
        rs.append([pn, pn])
        return True

    def contains(self, pn: int) -> bool:
        return any(lo <= pn <= hi for lo, hi in self._ranges)

    def as_tuples(self) -> list[tuple[int, int]]:
        return [(lo, hi) for lo, hi in self._ranges]

    def __bool__(self) -> bool:
        return bool(self._ranges)


class Stream:
    """Ordered reliable bidirectional stream."""

    def __init__(self, conn: Connection, stream_id: int) -> None:
        self.id = stream_id
        self._conn = conn
        # Send side.
        self._send_segments: list[tuple[int, bytes, bool]] = []
        self._send_offset = 0
        self._fin_queued = False
        self._fin_flushed = False
        # Receive side.
        self._recv_parts: dict[int, bytes] = {}
        self._recv_offset = 0
        self._recv_fin_at: int | None = None
        self._ready = bytearray()
        self._eof = False
        self._wakeup: asyncio.Event | None = None

    # --- send path ---

    def write(self, data: bytes, fin: bool = False) -> None:
        if self._fin_queued:
            raise ConnectionClosedError("write after fin")
        if self._conn._state not in (State.ESTABLISHED,):
            raise ConnectionClosedError("connection not writable")
        if data or fin:
            self._send_segments.append((self._send_offset, bytes(data), fin))
            self._send_offset += len(data)
        self._fin_queued = fin or self._fin_queued
        self._conn._pump()

    def close_write(self) -> None:
        if not self._fin_queued:
            self.write(b"", fin=True)

    def _requeue(self, frame: StreamFrame) -> None:
        # Lost data goes to the head so retransmits jump fresh writes.
        self._send_segments.insert(0, (frame.offset, frame.data, frame.fin))

    def _next_chunk(self, budget: int) -> StreamFrame | None:
        if not self._send_segments:
            return None
        offset, data, fin = self._send_segments[0]
        header = 1 + varint_size(self.id) + varint_size(offset) \
            + varint_size(len(data))
        if header + len(data) <= budget:
            self._send_segments.pop(0)
            chunk = StreamFrame(self.id, offset, data, fin=fin)
        else:
            take = budget - header
            if take <= 0:
                return None
            self._send_segments[0] = (offset + take, data[take:], fin)
            chunk = StreamFrame(self.id, offset, data[:take], fin=False)
        if chunk.fin:
            self._fin_flushed = True
            self._conn._on_stream_fin_flushed(self)
        return chunk

    def _has_pending(self) -> bool:
        return bool(self._send_segments)

    # --- receive path ---

    def _on_frame(self, frame: StreamFrame) -> None:
        if frame.fin:
            self._recv_fin_at = frame.offset + len(frame.data)
        if frame.offset + len(frame.data) > self._recv_offset:
            self._recv_parts[frame.offset] = frame.data
        self._drain_parts()

    def _drain_parts(self) -> None:
        progressed = False
        while True:
            for offset, data in list(self._recv_parts.items()):
                end = offset + len(data)
                if offset <= self._recv_offset < end or \
                        (offset == self._recv_offset and not data):
                    self._ready.extend(data[self._recv_offset - offset:])
                    self._recv_offset = end
                    del self._recv_parts[offset]
                    progressed = True
                    break
                if end <= self._recv_offset:
                    del self._recv_parts[offset]
                    progressed = True
                    break
            else:
                break
        if self._recv_fin_at is not None and \
                self._recv_offset >= self._recv_fin_at and not self._eof:
            self._eof = True
            self._conn._on_stream_recv_fin(self)
        if (progressed or self._eof) and self._wakeup is not None:
            self._wakeup.set()

    def _end(self) -> None:
        """Connection went away; unblock readers."""
        self._eof = True
        if self._wakeup is not None:
            self._wakeup.set()

    async def read(self) -> bytes | None:
        """Next chunk of ordered data, or None at end of stream."""
        while True:
            if self._ready:
                out = bytes(self._ready)
                self._ready.clear()
                return out
            if self._eof:
                return None
            if self._wakeup is None:
                self._wakeup = asyncio.Event()
            self._wakeup.clear()
            await self._wakeup.wait()

    async def read_all(self) -> bytes:
        out = bytearray()
        while (chunk := await self.read()) is not None:
            out.extend(chunk)
        return bytes(out)

    @property
    def fully_closed(self) -> bool:
        return self._fin_flushed and self._eof


class Connection:
    """One endpoint of a connection; see module docstring."""

    def __init__(self, side: Side, tuning: TuningProfile,
                 send_datagram: Callable[[bytes], None],
                 loop: asyncio.AbstractEventLoop | None = None,
                 on_stream: Callable[[Stream], None] | None = None,
                 on_closed: Callable[[Connection], None] | None = None,
                 qlog_enabled: bool = True) -> None:
        if tuning.zero_rtt_enabled:
            raise TransportError("early data is not supported by construction")
        self.side = side
        self.tuning = tuning
        self._send = send_datagram
        self._loop = loop or asyncio.get_event_loop()
        self._on_stream = on_stream
        self._on_closed = on_closed
        self._state = State.IDLE
        self.conn_id = b""

        self.events = EndpointEventLog()
        self.qlog_events: list[dict] | None = [] if qlog_enabled else None

        # Handshake material.
        self._pinned: bytes | None = None
        self._x25519: crypto.X25519PrivateKey | None = None
        self._protector: crypto.PacketProtector | None = None
        self._client_hello_raw: bytes | None = None
        self._server_hello_raw: bytes | None = None
        self._established = asyncio.Event()
        self._hello_timer: asyncio.TimerHandle | None = None
        self._hello_deadline_ms = 0.0
        self._handshake_started_ms = 0.0
        self._last_hello_sent_ms = 0.0
        self.params_local = TransportParams(
            max_ack_delay_ms=tuning.max_ack_delay_ms,
            max_bidi_streams=tuning.max_incoming_streams,
            idle_timeout_ms=tuning.min_remote_idle_timeout_ms)
        self.params_peer: TransportParams | None = None

        # Streams.
        self._streams: dict[int, Stream] = {}
        self._next_stream_index = 0
        self._peer_max_streams = 0
        self._stream_capacity = asyncio.Event()
        self.governor: StreamBudget | None = None
        if side is Side.SERVER:
            self.governor = StreamBudget(
                negotiated_max=tuning.max_incoming_streams,
                watermark_fraction=tuning.watermark_fraction)
        self.max_streams_adverts_sent = 0
        self.max_streams_adverts_received = 0

        # Packet numbering and ack state.
        self._next_pn = 0
        self._recv_ranges = _RecvRanges()
        self._ack_pending = 0
        self._ack_now = False
        self._largest_recv_ms = 0.0
        self._ack_timer: asyncio.TimerHandle | None = None

        # Recovery state.
        self._unacked: dict[int, SentPacket] = {}
        self._bytes_in_flight = 0
        self._srtt_ms = float(tuning.initial_rtt_guess_ms)
        self._rttvar_ms = self._srtt_ms / 2
        self._has_rtt_sample = False
        self._pto_count = 0
        self._pto_timer: asyncio.TimerHandle | None = None
        self._last_elicit_sent_ms = 0.0

        # Congestion state.
        self._cwnd = INITIAL_CWND
        self._ssthresh = float("inf")
        self._recovery_start_ms = -1.0

        # Control frame queue (MaxStreams and probes).
        self._control: list[Frame] = []

        # Close machinery.
        self._close_frame: ConnectionClose | None = None
        self._close_echo = asyncio.Event()
        self._closed_event = asyncio.Event()
        self._drained = asyncio.Event()
        self._drained.set()
        self.close_error: ConnectionClose | None = None

        # Idle tracking.
        self._idle_timer: asyncio.TimerHandle | None = None
        self._last_recv_ms = 0.0

        # Counters.
        self.datagrams_sent = 0
        self.datagrams_received = 0
        self.bytes_sent = 0
        self.bytes_received = 0
        self.initials_sent = 0

    # ------------------------------------------------------------------
    # Time and logging helpers

    def now_ms(self) -> float:
        return self._loop.time() * 1000.0

    def _qlog(self, name: str, **data) -> None:
        if self.qlog_events is not None:
            self.qlog_events.append(
                {"time": self.now_ms(), "name": name, "data": data})

    def _qlog_metrics(self) -> None:
        self._qlog("recovery:metrics_updated",
                   congestion_window=int(self._cwnd),
                   bytes_in_flight=self._bytes_in_flight,
                   smoothed_rtt=round(self._srtt_ms, 3))

    # ------------------------------------------------------------------
    # Client handshake

    async def connect(self, pinned_server_key: bytes | None = None) -> None:
        if self.side is not Side.CLIENT:
            raise TransportError("only clients call connect()")
        if self._state is not State.IDLE:
            raise TransportError("connect() called twice")
        self._pinned = pinned_server_key
        self._state = State.HANDSHAKING
        now = self.now_ms()
        self._handshake_started_ms = now
        self.events.record(EV_CONN_START, now)
        self.conn_id = os.urandom(packets.CONN_ID_LEN)
        self._x25519, public = crypto.exchange_keypair()
        hello = ClientHello(conn_id=self.conn_id, public_key=public,
                            params=self.params_local)
        self._client_hello_raw = hello.encode()
        self._send_client_hello()

        timeout_s = self.tuning.handshake_timeout_ms / 1000.0
        try:
            await asyncio.wait_for(self._established.wait(), timeout_s)
        except asyncio.TimeoutError:
            self._cancel_timer("_hello_timer")
            self._state = State.CLOSED
            raise HandshakeTimeout(
                f"no handshake after {self.tuning.handshake_timeout_ms} ms") from None
        if self._state is State.CLOSED:
            raise HandshakeTimeout("handshake abandoned")

    def _send_client_hello(self) -> None:
        now = self.now_ms()
        idle_budget = self.tuning.handshake_idle_timeout_ms
        if self._last_recv_ms == 0.0 and \
                now - self._handshake_started_ms > idle_budget:
            # Nothing ever came back; stop retransmitting.  connect()
            # sees the closed state and raises.
            self._teardown()
            return
        self.events.record(EV_FIRST_INITIAL_SENT, now)
        self._emit(self._client_hello_raw)
        self.initials_sent += 1
        self._last_hello_sent_ms = now
        self._qlog("transport:packet_sent", packet_type="initial",
                   raw={"length": INITIAL_SIZE})
        deadline_ms = (2 * self.tuning.initial_rtt_guess_ms
                       * (1 << (self.initials_sent - 1)))
        self._hello_timer = self._loop.call_later(
            deadline_ms / 1000.0, self._on_hello_timeout)

    def _on_hello_timeout(self) -> None:
        if self._state is State.HANDSHAKING:
            self._send_client_hello()

    def _on_server_hello(self, data: bytes) -> None:
        if self._state is not State.HANDSHAKING:
            return  # duplicate
        try:
            hello = ServerHello.decode(data)
        except packets.MalformedPacket:
            return
        if hello.conn_id != self.conn_id:
            return
        if self._pinned is not None and hello.identity_key != self._pinned:
            log.warning("server identity does not match pinned key")
            return
        try:
            crypto.verify_server_signature(hello.identity_key, hello.signature,
                                           hello.signed_portion())
        except crypto.BadServerSignature:
            log.warning("dropping server hello with bad signature")
            return
        transcript = crypto.transcript_hash(self._client_hello_raw,
                                            hello.signed_portion())
        keys = crypto.derive_keys(self._x25519, hello.public_key, transcript,
                                  is_client=True)
        self._protector = crypto.PacketProtector(keys)
        self.params_peer = hello.params
        self._peer_max_streams = hello.params.max_bidi_streams
        self._stream_capacity.set()
        self._cancel_timer("_hello_timer")
        now = self.now_ms()
        sample = now - self._last_hello_sent_ms
        self._seed_rtt(sample)
        self._state = State.ESTABLISHED
        self.events.record(EV_HANDSHAKE_DONE, now)
        self._qlog("transport:packet_received", packet_type="server_hello",
                   raw={"length": len(data)})
        self._established.set()
        self._arm_idle_timer()

    # ------------------------------------------------------------------
    # Server handshake

    @classmethod
    def server_accept(cls, hello_raw: bytes, tuning: TuningProfile,
                      identity: crypto.ServerIdentity,
                      send_datagram: Callable[[bytes], None],
                      loop: asyncio.AbstractEventLoop | None = None,
                      on_stream: Callable[[Stream], None] | None = None,
                      on_closed: Callable[[Connection], None] | None = None,
                      qlog_enabled: bool = True) -> Connection:
        hello = ClientHello.decode(hello_raw)
        conn = cls(Side.SERVER, tuning, send_datagram, loop=loop,
                   on_stream=on_stream, on_closed=on_closed,
                   qlog_enabled=qlog_enabled)
        conn.conn_id = hello.conn_id
        conn.params_peer = hello.params
        conn.events.record(EV_CONN_START, conn.now_ms())
        conn._x25519, public = crypto.exchange_keypair()
        reply = ServerHello(conn_id=hello.conn_id, public_key=public,
                            params=conn.params_local,
                            identity_key=identity.public_bytes,
                            signature=b"\x00" * crypto.SIGNATURE_LEN)
        signed = reply.signed_portion()
        reply = ServerHello(conn_id=reply.conn_id, public_key=reply.public_key,
                            params=reply.params,
                            identity_key=reply.identity_key,
                            signature=identity.sign(signed))
        transcript = crypto.transcript_hash(hello_raw, signed)
        keys = crypto.derive_keys(conn._x25519, hello.public_key, transcript,
                                  is_client=False)
        conn._protector = crypto.PacketProtector(keys)
        conn._server_hello_raw = reply.encode()
        conn._state = State.ESTABLISHED
        conn._seed_rtt(float(tuning.initial_rtt_guess_ms))
        conn._emit(conn._server_hello_raw)
        conn._qlog("transport:packet_sent", packet_type="server_hello",
                   raw={"length": len(conn._server_hello_raw)})
        conn.events.record(EV_HANDSHAKE_DONE, conn.now_ms())
        conn._arm_idle_timer()
        return conn

    def _resend_server_hello(self) -> None:
        if self._server_hello_raw is not None and \
                self._state in (State.ESTABLISHED, State.CLOSING):
            self._emit(self._server_hello_raw)

    # ------------------------------------------------------------------
    # Datagram IO

    def _emit(self, datagram: bytes) -> None:
        self.datagrams_sent += 1
        self.bytes_sent += len(datagram)
        self._send(datagram)

    def handle_datagram(self, data: bytes) -> None:
        try:
            kind = packets.packet_kind(data)
        except packets.MalformedPacket:
            return
        self.datagrams_received += 1
        self.bytes_received += len(data)
        self._last_recv_ms = self.now_ms()
        if kind == packets.PT_SERVER_HELLO and self.side is Side.CLIENT:
            self._on_server_hello(data)
            return
        if kind == packets.PT_CLIENT_HELLO and self.side is Side.SERVER:
            self._resend_server_hello()
            return
        if kind == packets.PT_ONE_RTT:
            self._on_protected(data)

    def _on_protected(self, data: bytes) -> None:
        if self._protector is None or self._state is State.CLOSED:
            return
        try:
            conn_id, pn, header, ciphertext = packets.decode_protected(data)
            if conn_id != self.conn_id:
                return
            payload = self._protector.open(pn, header, ciphertext)
        except (packets.MalformedPacket, crypto.DecryptError):
            return
        try:
            frames = decode_frames(payload)
        except ValueError:
            self._fatal(ERR_PROTOCOL, "undecodable frames")
            return
        if not self._recv_ranges.add(pn):
            return  # duplicate
        now = self.now_ms()
        self._qlog("transport:packet_received",
                   header={"packet_number": pn}, raw={"length": len(data)})
        eliciting = is_ack_eliciting(frames)
        if eliciting:
            if self._ack_pending == 0:
                self._largest_recv_ms = now
            self._ack_pending += 1
        for frame in frames:
            self._dispatch_frame(frame)
        if self._state in (State.CLOSED, State.DRAINING):
            return
        if self._ack_pending >= 2:
            self._ack_now = True
        self._pump()
        self._maybe_arm_ack_timer()
        self._arm_idle_timer()

    def _dispatch_frame(self, frame: Frame) -> None:
        if isinstance(frame, (Padding, Ping)):
            return
        if isinstance(frame, Ack):
            self._on_ack(frame)
        elif isinstance(frame, StreamFrame):
            self._on_stream_frame(frame)
        elif isinstance(frame, MaxStreams):
            if frame.limit > self._peer_max_streams:
                self._peer_max_streams = frame.limit
                self.max_streams_adverts_received += 1
                self._stream_capacity.set()
        elif isinstance(frame, ConnectionClose):
            self._on_peer_close(frame)

    # ------------------------------------------------------------------
    # Streams

    async def open_stream(self) -> Stream:
        if self.side is not Side.CLIENT:
            raise TransportError("server does not open streams")
        while True:
            if self._state is not State.ESTABLISHED:
                raise ConnectionClosedError("connection not open")
            if self._next_stream_index < self._peer_max_streams:
                index = self._next_stream_index
                self._next_stream_index += 1
                stream = Stream(self, index * 4)
                self._streams[stream.id] = stream
                return stream
            self._stream_capacity.clear()
            await self._stream_capacity.wait()

    def _on_stream_frame(self, frame: StreamFrame) -> None:
        stream = self._streams.get(frame.stream_id)
        if stream is None:
            if self.side is Side.SERVER and frame.stream_id % 4 == 0:
                index = frame.stream_id // 4
                if self.governor and index >= self.governor.advertised_limit:
                    self._fatal(ERR_STREAM_LIMIT, "stream limit exceeded")
                    return
                stream = Stream(self, frame.stream_id)
                self._streams[frame.stream_id] = stream
                if self.governor:
                    self.governor.on_stream_opened()
                if self._on_stream is not None:
                    self._on_stream(stream)
            else:
                return  # stray or peer-initiated: not supported
        stream._on_frame(frame)

    def _on_stream_fin_flushed(self, stream: Stream) -> None:
        self._check_stream_closed(stream)

    def _on_stream_recv_fin(self, stream: Stream) -> None:
        self._check_stream_closed(stream)

    def _check_stream_closed(self, stream: Stream) -> None:
        if stream.fully_closed and self.side is Side.SERVER and self.governor:
            new_limit = self.governor.on_stream_closed()
            if new_limit is not None:
                self._control.append(MaxStreams(limit=new_limit))
                self.max_streams_adverts_sent += 1

    # ------------------------------------------------------------------
    # Packet assembly

    def _make_ack(self) -> Ack:
        delay = max(0, int(self.now_ms() - self._largest_recv_ms))
        # Old ranges stop mattering once the peer has seen them acked;
        # cap the frame so a long lossy run cannot outgrow a packet.
        ranges = self._recv_ranges.as_tuples()[-32:]
        ack = ack_frame_from_pns(ranges, delay)
        self._ack_pending = 0
        self._ack_now = False
        self._cancel_timer("_ack_timer")
        return ack

    def _pump(self) -> None:
        if self._state is not State.ESTABLISHED:
            return
        budget_total = MAX_PACKET_SIZE - AEAD_TAG_LEN - \
            (1 + packets.CONN_ID_LEN + 8)
        while self._bytes_in_flight + MAX_PACKET_SIZE <= self._cwnd:
            # Peek before consuming ack state: an ack with nothing to
            # piggyback on stays pending for the threshold/timer path.
            if not self._control and \
                    not any(s._has_pending() for s in self._streams.values()):
                break
            frames: list[Frame] = []
            if self._ack_pending:
                frames.append(self._make_ack())
            room = budget_total - len(encode_frames(frames))
            while self._control and room > 16:
                ctrl = self._control.pop(0)
                frames.append(ctrl)
                room = budget_total - len(encode_frames(frames))
            for stream in list(self._streams.values()):
                while room > 8:
                    chunk = stream._next_chunk(room)
                    if chunk is None:
                        break
                    frames.append(chunk)
                    room -= len(encode_frames([chunk]))
                if room <= 8:
                    break
            self._send_packet(frames)
        if self._ack_now and self._ack_pending:
            self._send_packet([self._make_ack()])
        self._update_drained()

    def _send_packet(self, frames: list[Frame]) -> int:
        pn = self._next_pn
        self._next_pn += 1
        payload = encode_frames(frames)
        header = packets.encode_protected_header(self.conn_id, pn)
        datagram = header + self._protector.seal(pn, header, payload)
        self._emit(datagram)
        now = self.now_ms()
        eliciting = is_ack_eliciting(frames)
        self._qlog("transport:packet_sent", header={"packet_number": pn},
                   raw={"length": len(datagram)})
        if eliciting:
            kept = [f for f in frames if not isinstance(f, (Ack, Padding))]
            self._unacked[pn] = SentPacket(pn=pn, frames=kept,
                                           size=len(datagram),
                                           time_sent_ms=now,
                                           ack_eliciting=True)
            self._bytes_in_flight += len(datagram)
            self._last_elicit_sent_ms = now
            self._qlog_metrics()
            self._arm_pto_timer()
        return pn

    # ------------------------------------------------------------------
    # Acknowledgment processing and loss recovery

    def _seed_rtt(self, sample_ms: float) -> None:
        sample_ms = max(sample_ms, 1.0)
        self._srtt_ms = sample_ms
        self._rttvar_ms = sample_ms / 2
        self._has_rtt_sample = True

    def _update_rtt(self, sample_ms: float, ack_delay_ms: float) -> None:
        if self.params_peer is not None:
            ack_delay_ms = min(ack_delay_ms, self.params_peer.max_ack_delay_ms)
        adjusted = max(1.0, sample_ms - ack_delay_ms)
        if not self._has_rtt_sample:
            self._seed_rtt(adjusted)
            return
        err = abs(self._srtt_ms - adjusted)
        self._rttvar_ms = 0.75 * self._rttvar_ms + 0.25 * err
        self._srtt_ms = 0.875 * self._srtt_ms + 0.125 * adjusted

    def _pto_ms(self) -> float:
        base = self._srtt_ms + max(4 * self._rttvar_ms, PTO_GRANULARITY_MS)
        if self.params_peer is not None:
            base += self.params_peer.max_ack_delay_ms
        return base * (1 << min(self._pto_count, 6))

    def _on_ack(self, ack: Ack) -> None:
        now = self.now_ms()
        newly = [pn for pn in self._unacked
                 if any(lo <= pn <= hi for lo, hi in ack.ranges)]
        if not newly:
            return
        largest_newly = max(newly)
        if largest_newly == ack.largest and ack.largest in self._unacked:
            sample = now - self._unacked[ack.largest].time_sent_ms
            self._update_rtt(sample, ack.ack_delay_ms)
        acked_bytes = 0
        for pn in newly:
            packet = self._unacked.pop(pn)
            self._bytes_in_flight -= packet.size
            acked_bytes += packet.size
            if packet.time_sent_ms > self._recovery_start_ms:
                if self._cwnd < self._ssthresh:
                    self._cwnd += packet.size
                else:
                    self._cwnd += MAX_PACKET_SIZE * packet.size / self._cwnd
        self._pto_count = 0
        # Reordering threshold: anything 3 behind the largest ack is gone.
        lost = [pn for pn in sorted(self._unacked)
                if pn <= ack.largest - PACKET_REORDER_THRESHOLD]
        for pn in lost:
            self._declare_lost(pn)
        self._qlog_metrics()
        self._arm_pto_timer()
        self._pump()
        self._update_drained()

    def _declare_lost(self, pn: int) -> None:
        packet = self._unacked.pop(pn, None)
        if packet is None:
            return
        self._bytes_in_flight -= packet.size
        self._qlog("recovery:packet_lost", header={"packet_number": pn})
        if packet.time_sent_ms > self._recovery_start_ms:
            self._recovery_start_ms = self.now_ms()
            self._ssthresh = max(self._cwnd / 2, MIN_CWND)
            self._cwnd = self._ssthresh
        for frame in packet.frames:
            self._requeue_lost_frame(frame)

    def _requeue_lost_frame(self, frame: Frame) -> None:
        if isinstance(frame, StreamFrame):
            stream = self._streams.get(frame.stream_id)
            if stream is not None:
                stream._requeue(frame)
        elif isinstance(frame, MaxStreams):
            if self.governor is not None:
                self._control.append(
                    MaxStreams(limit=self.governor.advertised_limit))
        # Pings are probes; nothing to retransmit.

    def _arm_pto_timer(self) -> None:
        self._cancel_timer("_pto_timer")
        if not self._unacked or self._state not in (State.ESTABLISHED,
                                                    State.CLOSING):
            return
        deadline_ms = self._last_elicit_sent_ms + self._pto_ms()
        delay_s = max(0.0, deadline_ms - self.now_ms()) / 1000.0
        self._pto_timer = self._loop.call_later(delay_s, self._on_pto)

    def _on_pto(self) -> None:
        if not self._unacked or self._state not in (State.ESTABLISHED,
                                                    State.CLOSING):
            return
        self._pto_count += 1
        oldest = min(self._unacked)
        self._qlog("recovery:pto_fired", packet_number=oldest,
                   count=self._pto_count)
        self._declare_lost(oldest)
        if not any(s._has_pending() for s in self._streams.values()) \
                and not self._control:
            self._control.append(Ping())
        self._pump()
        self._arm_pto_timer()

    # ------------------------------------------------------------------
    # Delayed-ack timer

    def _maybe_arm_ack_timer(self) -> None:
        if self._ack_pending == 0 or self._ack_timer is not None:
            return
        delay_ms = self.tuning.max_ack_delay_ms
        fire_at = self._largest_recv_ms + delay_ms
        self._ack_timer = self._loop.call_later(
            max(0.0, fire_at - self.now_ms()) / 1000.0, self._on_ack_timer)

    def _on_ack_timer(self) -> None:
        self._ack_timer = None
        if self._ack_pending and self._state in (State.ESTABLISHED,
                                                 State.CLOSING):
            self._send_packet([self._make_ack()])

    # ------------------------------------------------------------------
    # Idle timeout

    def _arm_idle_timer(self) -> None:
        self._cancel_timer("_idle_timer")
        if self._state not in (State.ESTABLISHED,):
            return
        idle_ms = self.tuning.min_remote_idle_timeout_ms
        self._idle_timer = self._loop.call_later(idle_ms / 1000.0,
                                                 self._on_idle_timeout)

    def _on_idle_timeout(self) -> None:
        if self._state is not State.ESTABLISHED:
            return
        if self.now_ms() - self._last_recv_ms >= \
                self.tuning.min_remote_idle_timeout_ms - 1.0:
            log.info("connection %s idle, tearing down", self.conn_id.hex())
            self._teardown()
        else:
            self._arm_idle_timer()

    # ------------------------------------------------------------------
    # Close

    def _update_drained(self) -> None:
        pending = self._unacked or self._control or \
            any(s._has_pending() for s in self._streams.values())
        if pending:
            self._drained.clear()
        else:
            self._drained.set()

    async def drain(self) -> None:
        """Wait until everything written so far is sent and acked."""
        self._update_drained()
        await self._drained.wait()

    async def close(self, error_code: int = ERR_NO_ERROR,
                    reason: str = "") -> None:
        """Flush, announce the close, and wait for the peer's echo."""
        if self._state in (State.CLOSED, State.DRAINING):
            return
        if self._state is State.CLOSING:
            await self._closed_event.wait()
            return
        if self._state is State.HANDSHAKING or self._state is State.IDLE:
            self._teardown()
            return
        self._pump()
        self._state = State.CLOSING
        self._close_frame = ConnectionClose(error_code=error_code,
                                            reason=reason)
        self._send_close()
        for _ in range(3):
            try:
                await asyncio.wait_for(self._close_echo.wait(),
                                       self._pto_ms() / 1000.0)
                break
            except asyncio.TimeoutError:
                self._send_close()
        self._teardown()

    def _send_close(self) -> None:
        if self._close_frame is None or self._protector is None:
            return
        pn = self._next_pn
        self._next_pn += 1
        frames: list[Frame] = [self._close_frame]
        if self._ack_pending:
            frames.insert(0, self._make_ack())
        payload = encode_frames(frames)
        header = packets.encode_protected_header(self.conn_id, pn)
        self._emit(header + self._protector.seal(pn, header, payload))
        self._qlog("transport:packet_sent", header={"packet_number": pn},
                   raw={"length": len(payload) + len(header) + AEAD_TAG_LEN})

    def _on_peer_close(self, frame: ConnectionClose) -> None:
        self.close_error = frame
        if self._state is State.CLOSING:
            self._close_echo.set()
        elif self._state is State.ESTABLISHED:
            self._close_frame = ConnectionClose(error_code=ERR_NO_ERROR,
                                                reason="goodbye")
            self._send_close()
            self._state = State.DRAINING
            self._teardown(final_state=State.DRAINING)
        elif self._state is State.DRAINING:
            # Our echo evidently got lost; say it again.
            self._send_close()

    def _fatal(self, error_code: int, reason: str) -> None:
        log.warning("fatal transport error on %s: %s", self.conn_id.hex(),
                    reason)
        if self._state is State.ESTABLISHED:
            self._close_frame = ConnectionClose(error_code=error_code,
                                                reason=reason)
            self._send_close()
        self._teardown()

    def _teardown(self, final_state: State = State.CLOSED) -> None:
        already_done = self.events.first(EV_CONN_CLOSED) is not None
        for name in ("_hello_timer", "_ack_timer", "_pto_timer", "_idle_timer"):
            self._cancel_timer(name)
        if self._state is not State.DRAINING or final_state is State.DRAINING:
            self._state = final_state
        self._bytes_in_flight = 0
        self._unacked.clear()
        for stream in self._streams.values():
            stream._end()
        if not already_done:
            self.events.record(EV_CONN_CLOSED, self.now_ms())
        self._closed_event.set()
        self._established.set()
        self._stream_capacity.set()
        self._drained.set()
        if self._on_closed is not None and not already_done:
            callback, self._on_closed = self._on_closed, None
            callback(self)

    def _cancel_timer(self, attr: str) -> None:
        timer = getattr(self, attr)
        if timer is not None:
            timer.cancel()
            setattr(self, attr, None)

    # ------------------------------------------------------------------

    @property
    def state(self) -> State:
        return self._state

    @property
    def is_established(self) -> bool:
        return self._state is State.ESTABLISHED

    async def wait_closed(self) -> None:
        await self._closed_event.wait()

    def qlog_ndjson(self) -> str:
        if self.qlog_events is None:
            return ""
        header = {"qlog_version": "0.3", "qlog_format": "NDJSON",
                  "title": f"{self.side.value}-{self.conn_id.hex()}"}
        lines = [json.dumps(header)]
        lines += [json.dumps(e) for e in self.qlog_events]
        return "\n".join(lines) + "\n"
