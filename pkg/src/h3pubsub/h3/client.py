"""Publisher/subscriber client for the topic API.

One connection, one stream per request.  Credentials ride along on
every request until the first 2xx proves the connection authenticated;
after that the header is omitted and the broker's connection cache
takes over.
"""

from __future__ import annotations

import asyncio
from collections.abc import AsyncIterator

from ..auth import encode_basic_header
from ..events import EV_FIRST_APP_DATA_SENT, EV_REQUEST_DONE
from ..transport.connection import Connection
from .framing import (
    EventRecordDecoder,
    MalformedRequest,
    Method,
    Request,
    WriteBufferPolicy,
    decode_response_status,
    encode_request,
    topic_path,
    write_buffer_size,
)


class H3StatusError(Exception):
    def __init__(self, status: int, body: bytes = b"") -> None:
        super().__init__(f"unexpected status {status}")
        self.status = status
        self.body = body


class H3Client:
    """Thin request layer over an established connection."""

    def __init__(self, conn: Connection, user: str | None = None,
                 password: str | None = None,
                 write_policy: WriteBufferPolicy = WriteBufferPolicy.DYNAMIC
                 ) -> None:
        self.conn = conn
        self._user = user
        self._password = password
        self._authenticated = False
        self._write_policy = write_policy
        self.peak_write_buffer = 0
        self.requests_sent = 0
        self.auth_headers_sent = 0

    def _auth_header(self) -> str | None:
        if self._user is None or self._authenticated:
            return None
        return encode_basic_header(self._user, self._password or "")

    async def request(self, method: Method, path: str,
                      body: bytes = b"") -> tuple[int, bytes]:
        stream = await self.conn.open_stream()
        auth = self._auth_header()
        payload = encode_request(Request(method, path, auth, body))
        # Stage through a policy-sized buffer; the dynamic policy keeps
        # this allocation proportional to small publishes.
        staging = bytearray(write_buffer_size(self._write_policy,
                                              len(payload)))
        staging[:len(payload)] = payload
        self.peak_write_buffer = max(self.peak_write_buffer, len(staging))
        if auth is not None:
            self.auth_headers_sent += 1
        self.conn.events.record(EV_FIRST_APP_DATA_SENT, self.conn.now_ms())
        stream.write(bytes(staging[:len(payload)]), fin=True)
        self.requests_sent += 1
        raw = await stream.read_all()
        if not raw:
            raise H3StatusError(0, b"connection ended before response")
        status, header_len = decode_response_status(raw)
        if 200 <= status < 300:
            self._authenticated = True
        self.conn.events.record(EV_REQUEST_DONE, self.conn.now_ms())
        return status, raw[header_len:]

    # Topic operations ----------------------------------------------------

    async def topic_exists(self, name: str) -> bool:
        status, _ = await self.request(Method.HEAD, topic_path(name))
        if status == 200:
            return True
        if status == 404:
            return False
        raise H3StatusError(status)

    async def create_topic(self, name: str) -> bool:
        """True when the topic was created, False when it existed."""
        status, body = await self.request(Method.PUT, topic_path(name))
        if status == 201:
            return True
        if status == 200:
            return False
        raise H3StatusError(status, body)

    async def delete_topic(self, name: str) -> bool:
        status, body = await self.request(Method.DELETE, topic_path(name))
        if status == 200:
            return True
        if status == 404:
            return False
        raise H3StatusError(status, body)

    async def publish(self, name: str, payload: bytes) -> int:
        """Publish and return the broker-assigned sequence number."""
        from ..transport.varint import decode_varint

        status, body = await self.request(Method.POST, topic_path(name),
                                          payload)
        if status != 200:
            raise H3StatusError(status, body)
        try:
            seq, _ = decode_varint(body, 0)
        except ValueError as exc:
            raise MalformedRequest(f"bad publish response: {exc}") from exc
        return seq

    def publish_soon(self, name: str, payload: bytes) -> asyncio.Task:
        """Fire a publish without awaiting its response yet."""
        return asyncio.get_event_loop().create_task(
            self.publish(name, payload))

    async def subscribe(self, name: str
                        ) -> AsyncIterator[tuple[int, bytes]]:
        """Yield (seq, payload) until the subscription ends."""
        stream = await self.conn.open_stream()
        auth = self._auth_header()
        if auth is not None:
            self.auth_headers_sent += 1
        self.conn.events.record(EV_FIRST_APP_DATA_SENT, self.conn.now_ms())
        stream.write(encode_request(
            Request(Method.GET, topic_path(name), auth, b"")), fin=True)
        self.requests_sent += 1
        first = await stream.read()
        if first is None:
            raise H3StatusError(0, b"subscription stream ended early")
        status, header_len = decode_response_status(first)
        if status != 200:
            rest = await stream.read_all()
            raise H3StatusError(status, first[header_len:] + rest)
        self._authenticated = True
        decoder = EventRecordDecoder()
        chunk: bytes | None = first[header_len:]
        while chunk is not None:
            for seq, payload in decoder.feed(chunk):
                yield seq, payload
            chunk = await stream.read()
