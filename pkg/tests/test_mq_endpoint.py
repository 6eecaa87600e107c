"""MQTT session integration over the in-memory link, virtual clock."""

import asyncio

import pytest

from h3pubsub.auth import CredentialStore
from h3pubsub.clockutil import run_virtual
from h3pubsub.core import TopicRegistry
from h3pubsub.mq.broker import MqBroker
from h3pubsub.mq.client import AuthRejected, MqClient, MqError
from h3pubsub.mq.packets import ConnectReturnCode
from h3pubsub.netlab.impair import ImpairmentSpec
from h3pubsub.transport.crypto import ServerIdentity
from h3pubsub.transport.endpoint import bind_server_to_link, connect_over_link
from h3pubsub.transport.memnet import MemLink
from h3pubsub.tuning import stock_tuning

CREDS = CredentialStore({"alice": "s3cret"})


class Rig:
    def __init__(self, spec=None):
        loop = asyncio.get_event_loop()
        self.loop = loop
        self.spec = spec or ImpairmentSpec()
        self.registry = TopicRegistry()
        self.broker = MqBroker(self.registry, CREDS, stock_tuning(),
                               ServerIdentity.generate(), loop=loop)
        self.links: list[MemLink] = []

    def _link(self) -> MemLink:
        link = MemLink(self.spec, loop=self.loop)
        self.links.append(link)
        bind_server_to_link(self.broker.server, link)
        return link

    async def connect(self):
        return await connect_over_link(stock_tuning(), self._link(),
                                       loop=self.loop)

    async def session(self, user="alice", password="s3cret",
                      client_id="dev-1") -> MqClient:
        conn = await self.connect()
        client = MqClient(conn, client_id, user=user, password=password)
        await client.start()
        return client


def test_connect_accepted_with_valid_credentials():
    async def main():
        rig = Rig()
        client = await rig.session()
        assert rig.broker.sessions_accepted == 1
        assert rig.broker.credential_checks == 1
        await client.disconnect()
        await client.conn.close()

    run_virtual(main())


def test_connect_refused_codes():
    async def main():
        rig = Rig()
        with pytest.raises(AuthRejected) as bad:
            await rig.session(password="nope")
        assert bad.value.code is ConnectReturnCode.BAD_CREDENTIALS

        with pytest.raises(AuthRejected) as anon:
            await rig.session(user=None, password=None)
        assert anon.value.code is ConnectReturnCode.NOT_AUTHORIZED
        assert rig.broker.sessions_refused == 2
        assert rig.registry.topic_names() == ()

    run_virtual(main())


def test_qos0_publishes_land_in_registry():
    async def main():
        rig = Rig()
        client = await rig.session()
        for i in range(5):
            client.publish_qos0("env-temp", f"reading-{i}".encode())
        await client.conn.drain()
        await client.conn.close()
        return rig

    rig = run_virtual(main())
    assert rig.broker.publishes_accepted == 5
    retained = rig.registry.retained_events("env-temp")
    assert [e.seq for e in retained] == [5]
    assert retained[0].payload == b"reading-4"


def test_qos1_publishes_complete_on_puback():
    async def main():
        rig = Rig(spec=ImpairmentSpec(delay_ms=100))
        client = await rig.session()
        for i in range(5):
            await client.publish_qos1("env-hum", f"h{i}".encode())
        assert client.pubacks_received == 5
        await client.disconnect()
        await client.conn.close()
        return rig

    rig = run_virtual(main())
    assert rig.broker.publishes_accepted == 5


def test_qos1_concurrent_window():
    async def main():
        rig = Rig(spec=ImpairmentSpec(delay_ms=200))
        client = await rig.session()
        await asyncio.gather(*(
            client.publish_qos1("burst", f"m{i}".encode())
            for i in range(32)))
        assert client.pubacks_received == 32
        await client.conn.close()
        return rig

    rig = run_virtual(main())
    assert rig.broker.publishes_accepted == 32


def test_publish_before_connect_is_dropped():
    async def main():
        rig = Rig()
        conn = await rig.connect()
        client = MqClient(conn, "rogue", user="alice", password="s3cret")
        # Skip start(): write a publish on a fresh stream directly.
        client._stream = await conn.open_stream()
        loop = asyncio.get_event_loop()
        client._reader = loop.create_task(client._read_loop())
        with pytest.raises(MqError):
            await client.publish_qos1("env-temp", b"sneak")
        return rig

    rig = run_virtual(main())
    assert rig.broker.publishes_accepted == 0
    assert rig.registry.topic_names() == ()


def test_topic_autocreated_on_first_publish():
    async def main():
        rig = Rig()
        client = await rig.session()
        assert not rig.registry.topic_exists("fresh-topic")
        await client.publish_qos1("fresh-topic", b"hello")
        assert rig.registry.topic_exists("fresh-topic")
        await client.conn.close()

    run_virtual(main())
