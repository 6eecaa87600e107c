"""Topic broker: one stream per request, routed after connection auth.

Table of routes (all under /topics/<name>):

    HEAD    existence probe          200 / 404
    PUT     create                   201 created, 200 already there, 400 bad name
    DELETE  remove, drop subscribers 200 / 404
    POST    publish body             200 + sequence number / 404 / 413
    GET     subscribe, stream events until the topic dies or the
            client goes away

Unknown methods get 405, paths outside /topics/ get 404.  The
authorization check runs before any routing, and a rejected request
never touches the registry.
"""

from __future__ import annotations

import asyncio
import logging

from ..auth import ConnectionAuthCache, CredentialStore
from ..core import (
    CloseReason,
    InvalidName,
    PayloadTooLarge,
    TopicNotFound,
    TopicRegistry,
    CreateResult,
    DeleteResult,
)
from ..transport.connection import (
    Connection,
    ConnectionClosedError,
    Stream,
)
from ..transport.crypto import ServerIdentity
from ..transport.endpoint import Server
from ..transport.varint import encode_varint
from ..tuning import TuningProfile
from .framing import (
    MalformedRequest,
    Method,
    Request,
    decode_request,
    encode_event_record,
    encode_response,
    parse_topic_path,
)

log = logging.getLogger(__name__)


class H3Broker:
    """Publish-subscribe endpoint over the stream transport."""

    def __init__(self, registry: TopicRegistry, creds: CredentialStore,
                 tuning: TuningProfile, identity: ServerIdentity,
                 loop: asyncio.AbstractEventLoop | None = None,
                 qlog_enabled: bool = True) -> None:
        self.registry = registry
        self.creds = creds
        self.auth_cache = ConnectionAuthCache()
        self.auth_headers_received = 0
        self.requests_served = 0
        self.rejected_requests = 0
        self._loop = loop or asyncio.get_event_loop()
        self._tasks: set[asyncio.Task] = set()
        self.server = Server(tuning, identity, self._on_stream,
                             loop=self._loop,
                             on_conn_closed=self._on_conn_closed,
                             qlog_enabled=qlog_enabled)

    # Transport hooks -----------------------------------------------------

    def _on_conn_closed(self, conn: Connection) -> None:
        self.auth_cache.evict_connection(conn.conn_id)

    def _on_stream(self, conn: Connection, stream: Stream) -> None:
        task = self._loop.create_task(self._serve(conn, stream))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    # Request handling -----------------------------------------------------

    @staticmethod
    def _respond(stream: Stream, status: int, body: bytes = b"") -> None:
        try:
            stream.write(encode_response(status, body), fin=True)
        except ConnectionClosedError:
            pass

    async def _serve(self, conn: Connection, stream: Stream) -> None:
        raw = await stream.read_all()
        try:
            req = decode_request(raw)
        except MalformedRequest:
            self._respond(stream, 400, b"malformed request")
            return
        if req.auth is not None:
            self.auth_headers_received += 1
        user = self.auth_cache.authorize_request(
            self.creds, conn.conn_id, req.auth, now_ms=conn.now_ms())
        if user is None:
            self.rejected_requests += 1
            self._respond(stream, 401, b"unauthorized")
            return
        self.requests_served += 1
        name = parse_topic_path(req.path)
        if name is None:
            self._respond(stream, 404, b"unknown resource")
            return
        if req.method == Method.GET:
            await self._serve_subscription(conn, stream, name)
        else:
            self._respond(stream, *self._route(req, name))

    def _route(self, req: Request, name: str) -> tuple[int, bytes]:
        if req.method == Method.HEAD:
            return (200, b"") if self.registry.topic_exists(name) \
                else (404, b"")
        if req.method == Method.PUT:
            try:
                made = self.registry.create_topic(name)
            except InvalidName:
                return 400, b"invalid topic name"
            return (201, b"") if made is CreateResult.CREATED else (200, b"")
        if req.method == Method.DELETE:
            gone = self.registry.delete_topic(name)
            return (200, b"") if gone is DeleteResult.DELETED else (404, b"")
        if req.method == Method.POST:
            try:
                seq = self.registry.publish(name, req.body)
            except TopicNotFound:
                return 404, b"no such topic"
            except PayloadTooLarge:
                return 413, b"payload too large"
            return 200, encode_varint(seq)
        return 405, b"method not supported"

    async def _serve_subscription(self, conn: Connection, stream: Stream,
                                  name: str) -> None:
        try:
            sub = self.registry.subscribe(name)
        except TopicNotFound:
            self._respond(stream, 404, b"no such topic")
            return
        try:
            stream.write(encode_response(200))
            while (event := await sub.next_event()) is not None:
                stream.write(encode_event_record(event.seq, event.payload))
            # Topic deleted or queue overflowed; either way, end cleanly.
            stream.close_write()
            if sub.close_reason is CloseReason.OVERFLOW:
                log.warning("subscriber on %r dropped: queue overflow", name)
        except ConnectionClosedError:
            pass
        finally:
            self.registry.unsubscribe(sub)

    # Lifecycle ------------------------------------------------------------

    async def shutdown(self) -> None:
        await self.server.close_all()
        for task in list(self._tasks):
            task.cancel()
