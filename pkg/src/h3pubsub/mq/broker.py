"""Baseline queue-telemetry broker speaking MQTT 3.1.1 packets.

The whole session rides one stream: CONNECT answered by CONNACK,
then publishes, with PUBACK echoed for QoS 1 after the registry has
accepted the message.  Publishing to a topic nobody created yet
creates it, matching common broker behavior.  Credentials are checked
once at CONNECT; a session that fails the check gets the appropriate
refusal code and nothing else.
"""

from __future__ import annotations

import asyncio
import logging

from ..auth import CredentialStore
from ..core import InvalidName, PayloadTooLarge, TopicRegistry
from ..transport.connection import (
    Connection,
    ConnectionClosedError,
    Stream,
)
from ..transport.crypto import ServerIdentity
from ..transport.endpoint import Server
from ..tuning import TuningProfile
from .packets import (
    Connack,
    Connect,
    ConnectReturnCode,
    Disconnect,
    MalformedPacket,
    MqttPacket,
    Puback,
    Publish,
    StreamDecoder,
    encode_packet,
)

log = logging.getLogger(__name__)


class MqBroker:
    """Accepts MQTT sessions over the stream transport."""

    def __init__(self, registry: TopicRegistry, creds: CredentialStore,
                 tuning: TuningProfile, identity: ServerIdentity,
                 loop: asyncio.AbstractEventLoop | None = None,
                 qlog_enabled: bool = True) -> None:
        self.registry = registry
        self.creds = creds
        self.credential_checks = 0
        self.sessions_accepted = 0
        self.sessions_refused = 0
        self.publishes_accepted = 0
        self._loop = loop or asyncio.get_event_loop()
        self._tasks: set[asyncio.Task] = set()
        self.server = Server(tuning, identity, self._on_stream,
                             loop=self._loop, qlog_enabled=qlog_enabled)

    def _on_stream(self, conn: Connection, stream: Stream) -> None:
        task = self._loop.create_task(self._serve(stream))
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    async def _serve(self, stream: Stream) -> None:
        decoder = StreamDecoder()
        authenticated = False
        try:
            while (chunk := await stream.read()) is not None:
                try:
                    received = decoder.feed(chunk)
                except MalformedPacket as exc:
                    log.info("dropping session, bad packet: %s", exc)
                    stream.close_write()
                    return
                for packet in received:
                    done, authenticated = self._handle(
                        stream, packet, authenticated)
                    if done:
                        return
        except ConnectionClosedError:
            pass

    def _handle(self, stream: Stream, packet: MqttPacket,
                authenticated: bool) -> tuple[bool, bool]:
        """Returns (session finished, authenticated)."""
        if isinstance(packet, Connect):
            code = self._check_connect(packet)
            stream.write(encode_packet(Connack(return_code=code)))
            if code is not ConnectReturnCode.ACCEPTED:
                self.sessions_refused += 1
                stream.close_write()
                return True, False
            self.sessions_accepted += 1
            return False, True
        if isinstance(packet, Publish):
            if not authenticated:
                log.info("publish before successful connect, dropping session")
                stream.close_write()
                return True, authenticated
            self._accept_publish(stream, packet)
            return False, authenticated
        if isinstance(packet, Disconnect):
            stream.close_write()
            return True, authenticated
        # Puback from a client is meaningless here (broker never
        # publishes toward clients in this baseline); ignore.
        return False, authenticated

    def _check_connect(self, packet: Connect) -> ConnectReturnCode:
        if packet.username is None:
            return ConnectReturnCode.NOT_AUTHORIZED
        self.credential_checks += 1
        if not self.creds.check(packet.username, packet.password or ""):
            return ConnectReturnCode.BAD_CREDENTIALS
        return ConnectReturnCode.ACCEPTED

    def _accept_publish(self, stream: Stream, packet: Publish) -> None:
        try:
            self.registry.create_topic(packet.topic)
            self.registry.publish(packet.topic, packet.payload)
        except (InvalidName, PayloadTooLarge) as exc:
            log.info("rejecting publish to %r: %s", packet.topic, exc)
            return
        self.publishes_accepted += 1
        if packet.qos == 1:
            stream.write(encode_packet(Puback(packet_id=packet.packet_id)))

    async def shutdown(self) -> None:
        await self.server.close_all()
        for task in list(self._tasks):
            task.cancel()
