"""MQTT session client: connect, publish at QoS 0 or 1, disconnect.

QoS 1 keeps a modest in-flight window and completes each publish on
its PUBACK.  There is no application-layer retransmit; the transport
already delivers stream bytes reliably, so a PUBACK that fails to
arrive within the timeout signals something genuinely wrong rather
than routine loss.
"""

from __future__ import annotations

import asyncio
import itertools
import logging

from ..events import EV_FIRST_APP_DATA_SENT
from ..transport.connection import Connection, ConnectionClosedError, Stream
from .packets import (
    Connack,
    Connect,
    ConnectReturnCode,
    Disconnect,
    MalformedPacket,
    Puback,
    Publish,
    StreamDecoder,
    encode_packet,
)

log = logging.getLogger(__name__)

PUBACK_WINDOW = 16
# Must sit above a few exponentially backed-off transport recovery
# rounds: in-order delivery stacks stalls from unrelated losses onto
# this packet's wait, so a tight deadline misreads routine recovery
# as a dead link.
PUBACK_TIMEOUT_RTTS = 15
# Floor so a near-zero expected RTT still leaves room for one
# scheduling round plus retransmits.
PUBACK_TIMEOUT_MIN_S = 1.0


class MqError(Exception):
    pass


class AuthRejected(MqError):
    def __init__(self, code: ConnectReturnCode) -> None:
        super().__init__(f"broker refused session: {code.name}")
        self.code = code


class PubackTimeout(MqError):
    pass


class MqClient:
    """One MQTT session over one transport connection."""

    def __init__(self, conn: Connection, client_id: str,
                 user: str | None = None, password: str | None = None,
                 expected_rtt_ms: int | None = None) -> None:
        self.conn = conn
        self.client_id = client_id
        self._user = user
        self._password = password
        rtt = expected_rtt_ms if expected_rtt_ms is not None \
            else conn.tuning.expected_rtt_ms
        self._puback_timeout_s = max(PUBACK_TIMEOUT_RTTS * rtt / 1000.0,
                                     PUBACK_TIMEOUT_MIN_S)
        self._stream: Stream | None = None
        self._reader: asyncio.Task | None = None
        self._connack: asyncio.Future | None = None
        self._pending: dict[int, asyncio.Future] = {}
        self._window = asyncio.Semaphore(PUBACK_WINDOW)
        self._pid_counter = itertools.count(1)
        self.pubacks_received = 0

    async def start(self) -> None:
        """Open the session stream and wait for the broker's verdict."""
        loop = asyncio.get_event_loop()
        self._stream = await self.conn.open_stream()
        self._connack = loop.create_future()
        self._reader = loop.create_task(self._read_loop())
        self._stream.write(encode_packet(Connect(
            client_id=self.client_id, username=self._user,
            password=self._password)))
        connack: Connack = await self._connack
        if connack.return_code is not ConnectReturnCode.ACCEPTED:
            raise AuthRejected(connack.return_code)

    async def _read_loop(self) -> None:
        decoder = StreamDecoder()
        try:
            while (chunk := await self._stream.read()) is not None:
                for packet in decoder.feed(chunk):
                    self._dispatch(packet)
        except (MalformedPacket, ConnectionClosedError) as exc:
            log.info("session reader stopped: %s", exc)
        finally:
            self._fail_pending(MqError("session ended"))

    def _dispatch(self, packet) -> None:
        if isinstance(packet, Connack):
            if self._connack is not None and not self._connack.done():
                self._connack.set_result(packet)
        elif isinstance(packet, Puback):
            self.pubacks_received += 1
            future = self._pending.pop(packet.packet_id, None)
            if future is not None and not future.done():
                future.set_result(None)

    def _fail_pending(self, exc: Exception) -> None:
        if self._connack is not None and not self._connack.done():
            self._connack.set_exception(exc)
        for future in self._pending.values():
            if not future.done():
                future.set_exception(exc)
        self._pending.clear()

    def _next_packet_id(self) -> int:
        while True:
            pid = next(self._pid_counter) % 65536
            if pid != 0 and pid not in self._pending:
                return pid

    def _mark_first_publish(self) -> None:
        self.conn.events.record(EV_FIRST_APP_DATA_SENT, self.conn.now_ms())

    def publish_qos0(self, topic: str, payload: bytes) -> None:
        """Fire-and-forget publish; returns as soon as it is written."""
        self._mark_first_publish()
        self._stream.write(encode_packet(Publish(topic=topic,
                                                 payload=payload)))

    async def publish_qos1(self, topic: str, payload: bytes) -> None:
        """Publish and wait for the matching PUBACK."""
        async with self._window:
            pid = self._next_packet_id()
            future = asyncio.get_event_loop().create_future()
            self._pending[pid] = future
            self._mark_first_publish()
            self._stream.write(encode_packet(Publish(
                topic=topic, payload=payload, qos=1, packet_id=pid)))
            try:
                await asyncio.wait_for(future, self._puback_timeout_s)
            except asyncio.TimeoutError:
                self._pending.pop(pid, None)
                raise PubackTimeout(
                    f"no PUBACK for packet {pid} within "
                    f"{self._puback_timeout_s:.1f} s") from None

    async def disconnect(self) -> None:
        if self._stream is not None:
            try:
                self._stream.write(encode_packet(Disconnect()))
            except ConnectionClosedError:
                pass
        if self._reader is not None:
            self._reader.cancel()
