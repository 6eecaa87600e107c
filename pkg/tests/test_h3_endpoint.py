"""Broker/client integration over the in-memory link, virtual clock."""

import asyncio

import pytest

from h3pubsub.auth import CredentialStore
from h3pubsub.clockutil import run_virtual
from h3pubsub.core import TopicRegistry
from h3pubsub.h3.broker import H3Broker
from h3pubsub.h3.client import H3Client, H3StatusError
from h3pubsub.h3.framing import Method, topic_path
from h3pubsub.netlab.impair import ImpairmentSpec
from h3pubsub.transport.crypto import ServerIdentity
from h3pubsub.transport.endpoint import bind_server_to_link, connect_over_link
from h3pubsub.transport.memnet import MemLink
from h3pubsub.tuning import stock_tuning

CREDS = CredentialStore({"alice": "s3cret", "bob": "hunter2"})


class Rig:
    def __init__(self, spec=None, registry=None):
        loop = asyncio.get_event_loop()
        self.loop = loop
        self.spec = spec or ImpairmentSpec()
        self.registry = registry or TopicRegistry()
        self.broker = H3Broker(self.registry, CREDS, stock_tuning(),
                               ServerIdentity.generate(), loop=loop)
        self.links: list[MemLink] = []

    async def client(self, user="alice", password="s3cret") -> H3Client:
        # Links are point-to-point; every client gets its own.
        link = MemLink(self.spec, loop=self.loop)
        self.links.append(link)
        bind_server_to_link(self.broker.server, link)
        conn = await connect_over_link(stock_tuning(), link, loop=self.loop)
        return H3Client(conn, user=user, password=password)

    @property
    def link(self) -> MemLink:
        assert len(self.links) == 1
        return self.links[0]


def test_route_matrix():
    async def main():
        rig = Rig(registry=TopicRegistry(max_payload=64))
        client = await rig.client()

        assert await client.create_topic("telemetry") is True
        assert await client.create_topic("telemetry") is False
        assert await client.topic_exists("telemetry") is True
        assert await client.topic_exists("nope") is False

        assert await client.publish("telemetry", b"r1") == 1
        assert await client.publish("telemetry", b"r2") == 2

        with pytest.raises(H3StatusError) as missing:
            await client.publish("ghost", b"x")
        assert missing.value.status == 404

        with pytest.raises(H3StatusError) as too_big:
            await client.publish("telemetry", b"z" * 65)
        assert too_big.value.status == 413

        status, _ = await client.request(Method.PUT, topic_path("bad name!"))
        assert status == 400

        status, _ = await client.request(Method.HEAD,
                                         "/not-topics/telemetry")
        assert status == 404

        status, _ = await client.request(99, topic_path("telemetry"))
        assert status == 405

        assert await client.delete_topic("telemetry") is True
        assert await client.delete_topic("telemetry") is False
        await client.conn.close()

    run_virtual(main())


def test_subscription_replays_retained_then_follows_live():
    async def main():
        rig = Rig()
        publisher = await rig.client()
        await publisher.create_topic("metrics")
        await publisher.publish("metrics", b"old")

        subscriber = await rig.client(user="bob", password="hunter2")
        received = []

        async def consume():
            async for seq, payload in subscriber.subscribe("metrics"):
                received.append((seq, payload))

        task = asyncio.get_event_loop().create_task(consume())
        await asyncio.sleep(0.5)
        await publisher.publish("metrics", b"fresh-1")
        await publisher.publish("metrics", b"fresh-2")
        await asyncio.sleep(0.5)
        await publisher.delete_topic("metrics")
        await asyncio.wait_for(task, 10)
        assert received == [(1, b"old"), (2, b"fresh-1"), (3, b"fresh-2")]

    run_virtual(main())


def test_fifty_publishes_one_header_one_check():
    # Paced publishes on a fast link: the first response lands before
    # the second request leaves, so exactly one request carries
    # credentials and the cache absorbs the rest.
    async def main():
        rig = Rig()
        rig.registry.create_topic("sensor")
        client = await rig.client()
        for _ in range(50):
            await asyncio.sleep(0.01)
            await client.publish("sensor", b"x" * 32)
        await client.conn.close()
        return rig

    rig = run_virtual(main())
    assert rig.broker.auth_headers_received == 1
    assert rig.broker.auth_cache.checks_performed == 1
    assert rig.broker.requests_served == 50
    assert len(rig.registry.retained_events("sensor")) == 1


def test_wrong_credentials_rejected_without_side_effects():
    async def main():
        rig = Rig()
        client = await rig.client(password="wrong")
        with pytest.raises(H3StatusError) as exc:
            await client.create_topic("secrets")
        assert exc.value.status == 401
        with pytest.raises(H3StatusError) as exc:
            await client.publish("secrets", b"leak")
        assert exc.value.status == 401
        return rig

    rig = run_virtual(main())
    assert rig.registry.topic_names() == ()
    assert rig.broker.rejected_requests == 2
    assert rig.broker.auth_cache.checks_performed == 2
    assert len(rig.broker.auth_cache) == 0


def test_missing_credentials_rejected():
    async def main():
        rig = Rig()
        client = await rig.client(user=None, password=None)
        status, _ = await client.request(Method.PUT, topic_path("t"))
        assert status == 401

    run_virtual(main())


def test_auth_cache_does_not_outlive_connection():
    async def main():
        rig = Rig()
        first = await rig.client()
        await first.create_topic("durable")
        assert len(rig.broker.auth_cache) == 1
        await first.conn.close()
        assert len(rig.broker.auth_cache) == 0

        # A new connection must authenticate from scratch.
        fresh = await rig.client(user=None, password=None)
        status, _ = await fresh.request(Method.HEAD, topic_path("durable"))
        assert status == 401

    run_virtual(main())


def test_publish_pipelining_over_slow_link():
    # Publishes keep flowing while responses are still in flight.
    async def main():
        rig = Rig(spec=ImpairmentSpec(delay_ms=400))
        rig.registry.create_topic("pipe")
        client = await rig.client()
        loop = asyncio.get_event_loop()
        started = loop.time()
        tasks = []
        for _ in range(10):
            await asyncio.sleep(0.1)
            tasks.append(client.publish_soon("pipe", b"y" * 32))
        seqs = await asyncio.gather(*tasks)
        elapsed = loop.time() - started
        assert sorted(seqs) == list(range(1, 11))
        # Ten sequential round trips would need ~8 s; pipelined they
        # fit in roughly one send window plus one RTT.
        assert elapsed < 3.0
        assert client.auth_headers_sent >= 1

    run_virtual(main())
