"""Endpoint plumbing: server-side demux and client connect helpers.

A Server owns many connections keyed by connection id and is agnostic
about how datagrams arrive; callers hand it (datagram, reply callable)
pairs.  Adapters below bind that to a UDP socket or to a MemLink.
"""

from __future__ import annotations

import asyncio
import logging
from collections.abc import Callable

from ..tuning import TuningProfile
from . import packets
from .connection import Connection, Side, Stream
from .crypto import ServerIdentity
from .memnet import MemLink
from ..netlab.impair import Direction

log = logging.getLogger(__name__)

StreamHandler = Callable[[Connection, Stream], None]
DRAIN_LINGER_FACTOR = 3


class Server:
    """Accepts hellos and routes datagrams to per-connection machines."""

    def __init__(self, tuning: TuningProfile, identity: ServerIdentity,
                 on_stream: StreamHandler,
                 loop: asyncio.AbstractEventLoop | None = None,
                 on_connection: Callable[[Connection], None] | None = None,
                 on_conn_closed: Callable[[Connection], None] | None = None,
                 qlog_enabled: bool = True) -> None:
        self.tuning = tuning
        self.identity = identity
        self._loop = loop or asyncio.get_event_loop()
        self._on_stream = on_stream
        self._on_connection = on_connection
        self._on_conn_closed = on_conn_closed
        self._qlog_enabled = qlog_enabled
        self.connections: dict[bytes, Connection] = {}
        self._replies: dict[bytes, Callable[[bytes], None]] = {}
        self.accepted_total = 0

    def handle_datagram(self, data: bytes,
                        reply: Callable[[bytes], None]) -> None:
        try:
            kind = packets.packet_kind(data)
        except packets.MalformedPacket:
            return
        if len(data) < 1 + packets.CONN_ID_LEN:
            return
        conn_id = bytes(data[1:1 + packets.CONN_ID_LEN])
        self._replies[conn_id] = reply
        conn = self.connections.get(conn_id)
        if conn is None:
            if kind != packets.PT_CLIENT_HELLO:
                return
            self._accept(conn_id, data)
        else:
            conn.handle_datagram(data)

    def _accept(self, conn_id: bytes, hello_raw: bytes) -> None:
        conn_box: list[Connection] = []

        def send(datagram: bytes) -> None:
            sink = self._replies.get(conn_id)
            if sink is not None:
                sink(datagram)

        def on_stream(stream: Stream) -> None:
            self._on_stream(conn_box[0], stream)

        try:
            conn = Connection.server_accept(
                hello_raw, self.tuning, self.identity, send,
                loop=self._loop, on_stream=on_stream,
                on_closed=self._conn_closed,
                qlog_enabled=self._qlog_enabled)
        except packets.MalformedPacket:
            log.warning("dropping malformed hello for %s", conn_id.hex())
            return
        conn_box.append(conn)
        self.connections[conn_id] = conn
        self.accepted_total += 1
        if self._on_connection is not None:
            self._on_connection(conn)

    def add_close_hook(self, hook: Callable[[Connection], None]) -> None:
        """Chain a callback after any existing connection-closed hook."""
        prev = self._on_conn_closed

        def chained(conn: Connection) -> None:
            if prev is not None:
                prev(conn)
            hook(conn)

        self._on_conn_closed = chained

    def _conn_closed(self, conn: Connection) -> None:
        if self._on_conn_closed is not None:
            self._on_conn_closed(conn)
        # Linger so a re-arriving close still gets its echo.
        linger_s = DRAIN_LINGER_FACTOR * conn._pto_ms() / 1000.0
        self._loop.call_later(linger_s, self._forget, conn.conn_id)

    def _forget(self, conn_id: bytes) -> None:
        self.connections.pop(conn_id, None)
        self._replies.pop(conn_id, None)

    async def close_all(self) -> None:
        conns = list(self.connections.values())
        await asyncio.gather(*(c.close() for c in conns),
                             return_exceptions=True)


async def connect_client(tuning: TuningProfile,
                         send: Callable[[bytes], None],
                         loop: asyncio.AbstractEventLoop | None = None,
                         pinned_server_key: bytes | None = None,
                         on_closed: Callable[[Connection], None] | None = None,
                         qlog_enabled: bool = True) -> Connection:
    conn = Connection(Side.CLIENT, tuning, send, loop=loop,
                      on_closed=on_closed, qlog_enabled=qlog_enabled)
    await conn.connect(pinned_server_key=pinned_server_key)
    return conn


# ----------------------------------------------------------------------
# MemLink adapters


def bind_server_to_link(server: Server, link: MemLink) -> None:
    sender = link.server_sender()
    link.set_receiver(Direction.UP,
                      lambda data: server.handle_datagram(data, sender))


async def connect_over_link(tuning: TuningProfile, link: MemLink,
                            loop: asyncio.AbstractEventLoop | None = None,
                            pinned_server_key: bytes | None = None,
                            qlog_enabled: bool = True) -> Connection:
    conn = Connection(Side.CLIENT, tuning, link.client_sender(), loop=loop,
                      qlog_enabled=qlog_enabled)
    link.set_receiver(Direction.DOWN, conn.handle_datagram)
    await conn.connect(pinned_server_key=pinned_server_key)
    return conn


# ----------------------------------------------------------------------
# UDP adapters


class _UdpServerProtocol(asyncio.DatagramProtocol):
    def __init__(self, server: Server) -> None:
        self._server = server
        self._transport: asyncio.DatagramTransport | None = None

    def connection_made(self, transport) -> None:
        self._transport = transport

    def datagram_received(self, data: bytes, addr) -> None:
        transport = self._transport

        def reply(datagram: bytes) -> None:
            if transport is not None and not transport.is_closing():
                transport.sendto(datagram, addr)

        self._server.handle_datagram(data, reply)


async def serve_udp(server: Server, host: str, port: int
                    ) -> tuple[asyncio.DatagramTransport, tuple[str, int]]:
    loop = asyncio.get_running_loop()
    transport, _ = await loop.create_datagram_endpoint(
        lambda: _UdpServerProtocol(server), local_addr=(host, port))
    return transport, transport.get_extra_info("sockname")[:2]


class _UdpClientProtocol(asyncio.DatagramProtocol):
    def __init__(self) -> None:
        self.conn: Connection | None = None

    def datagram_received(self, data: bytes, addr) -> None:
        if self.conn is not None:
            self.conn.handle_datagram(data)


async def connect_udp(tuning: TuningProfile, host: str, port: int,
                      pinned_server_key: bytes | None = None,
                      qlog_enabled: bool = True
                      ) -> tuple[Connection, asyncio.DatagramTransport]:
    loop = asyncio.get_running_loop()
    protocol = _UdpClientProtocol()
    transport, _ = await loop.create_datagram_endpoint(
        lambda: protocol, remote_addr=(host, port))

    def send(datagram: bytes) -> None:
        if not transport.is_closing():
            transport.sendto(datagram)

    conn = Connection(Side.CLIENT, tuning, send, loop=loop,
                      qlog_enabled=qlog_enabled)
    protocol.conn = conn
    try:
        await conn.connect(pinned_server_key=pinned_server_key)
    except Exception:
        transport.close()
        raise
    return conn, transport
