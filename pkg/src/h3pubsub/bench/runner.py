"""Iteration runner: one fresh stack per iteration, measured end to end.

Each iteration builds a broker, an impaired in-memory link seeded from
the spec, and one client connection, then plays the workload: sleep
one interval, publish, repeat.  The pacing clock starts at session
readiness (handshake done; for the queue modes, CONNACK), so
exec_time always covers at least message_count intervals.

Anchors:
    exec_time   conn_start to the mode's completion event: last
                response (h3), last PUBACK (mq-ad), or the close
                handshake finishing (mq-ff).
    ttfdf       first hello datagram to first application data write.

Byte and datagram counts are read from the link's counters, not the
endpoints: datagrams as offered to the link (retransmits included),
bytes as actually forwarded.

Everything runs on a virtual-time loop, so a simulated minute of
narrowband traffic costs milliseconds of wall time, and a given
(spec, iteration) pair is fully deterministic.
"""

from __future__ import annotations

import asyncio
import logging
import resource
from dataclasses import dataclass

from ..auth import CredentialStore
from ..clockutil import run_virtual
from ..core import TopicRegistry
from ..events import EV_CONN_CLOSED, EV_CONN_START
from ..h3.broker import H3Broker
from ..h3.client import H3Client
from ..mq.broker import MqBroker
from ..mq.client import MqClient
from ..netlab.impair import Direction
from ..transport.crypto import ServerIdentity
from ..transport.endpoint import bind_server_to_link, connect_over_link
from ..transport.memnet import MemLink
from .experiments import ExperimentSpec, Mode

log = logging.getLogger(__name__)

BENCH_TOPIC = "bench"
BENCH_USER = "bench"
BENCH_PASSWORD = "bench-pass"


class IterationFailure(Exception):
    pass


@dataclass(frozen=True)
class MetricSample:
    iteration: int
    exec_time_ms: float
    ttfdf_ms: float
    bytes_up: int
    bytes_down: int
    datagrams_up: int
    datagrams_down: int
    max_streams_adverts: int

    def __post_init__(self) -> None:
        if not (self.exec_time_ms >= self.ttfdf_ms >= 0):
            raise IterationFailure(
                f"inconsistent timing: exec {self.exec_time_ms} ms, "
                f"ttfdf {self.ttfdf_ms} ms")


@dataclass(frozen=True)
class FailureRecord:
    experiment_id: str
    mode: str
    iteration: int
    error: str


@dataclass(frozen=True)
class ResourceRecord:
    """Best-effort process counters; not comparable across machines."""
    experiment_id: str
    mode: str
    iteration: int
    cpu_user_s: float
    max_rss_kib: int


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    samples: list[MetricSample]
    failures: list[FailureRecord]
    resources: list[ResourceRecord]
    qlog_trace: str = ""  # client trace from the last iteration


def _payload(spec: ExperimentSpec, k: int) -> bytes:
    seed = (spec.iteration_seed(0) + k) & 0xFF
    return bytes((seed + i) & 0xFF for i in range(spec.message_size))


async def _run_h3(spec: ExperimentSpec, conn, registry) -> float:
    client = H3Client(conn, user=BENCH_USER, password=BENCH_PASSWORD)
    interval = spec.interval_ms / 1000.0
    tasks = []
    for k in range(spec.message_count):
        await asyncio.sleep(interval)
        tasks.append(client.publish_soon(BENCH_TOPIC, _payload(spec, k)))
    await asyncio.gather(*tasks)
    end_ms = conn.now_ms()
    await conn.close()
    return end_ms


async def _run_mq(spec: ExperimentSpec, conn, registry) -> float:
    client = MqClient(conn, "bench-dev", user=BENCH_USER,
                      password=BENCH_PASSWORD)
    await client.start()
    interval = spec.interval_ms / 1000.0
    if spec.mode is Mode.MQ_AD:
        loop = asyncio.get_event_loop()
        tasks = []
        for k in range(spec.message_count):
            await asyncio.sleep(interval)
            tasks.append(loop.create_task(
                client.publish_qos1(BENCH_TOPIC, _payload(spec, k))))
        await asyncio.gather(*tasks)
        end_ms = conn.now_ms()
        await client.disconnect()
        await conn.close()
        return end_ms
    # Fire-and-forget: done when the close handshake completes.
    for k in range(spec.message_count):
        await asyncio.sleep(interval)
        client.publish_qos0(BENCH_TOPIC, _payload(spec, k))
    await client.disconnect()
    await conn.close()
    return conn.events.first(EV_CONN_CLOSED)


async def _iteration_body(spec: ExperimentSpec,
                          iteration: int) -> tuple[MetricSample, str]:
    loop = asyncio.get_event_loop()
    registry = TopicRegistry()
    registry.create_topic(BENCH_TOPIC)
    creds = CredentialStore({BENCH_USER: BENCH_PASSWORD})
    identity = ServerIdentity.generate()
    tuning = spec.tuning()
    link = MemLink(spec.impairments(iteration), loop=loop)
    broker_cls = H3Broker if spec.mode is Mode.H3 else MqBroker
    broker = broker_cls(registry, creds, tuning, identity, loop=loop)
    bind_server_to_link(broker.server, link)

    conn = await connect_over_link(tuning, link, loop=loop)
    try:
        if spec.mode is Mode.H3:
            end_ms = await _run_h3(spec, conn, registry)
        else:
            end_ms = await _run_mq(spec, conn, registry)
    finally:
        if not conn.events.first(EV_CONN_CLOSED):
            await conn.close()
        link.close()

    start_ms = conn.events.first(EV_CONN_START)
    ttfdf = conn.events.ttfdf_ms()
    if start_ms is None or ttfdf is None:
        raise IterationFailure("incomplete event log")
    up = link.engine.counters(Direction.UP)
    down = link.engine.counters(Direction.DOWN)
    sample = MetricSample(
        iteration=iteration,
        exec_time_ms=end_ms - start_ms,
        ttfdf_ms=ttfdf,
        bytes_up=up.bytes_forwarded,
        bytes_down=down.bytes_forwarded,
        datagrams_up=up.offered,
        datagrams_down=down.offered,
        max_streams_adverts=conn.max_streams_adverts_received)
    # Keep the client trace around for congestion analysis.
    sample_trace = conn.qlog_ndjson()
    return sample, sample_trace


def run_iteration(spec: ExperimentSpec,
                  iteration: int) -> tuple[MetricSample, str]:
    """One fully isolated iteration on a fresh virtual-time loop."""
    try:
        return run_virtual(_iteration_body(spec, iteration))
    except IterationFailure:
        raise
    except Exception as exc:
        raise IterationFailure(f"{type(exc).__name__}: {exc}") from exc


def run_experiment(spec: ExperimentSpec, on_progress=None) -> ExperimentResult:
    """All iterations of one spec, with a single rerun per failure."""
    result = ExperimentResult(spec=spec, samples=[], failures=[],
                              resources=[])
    for iteration in range(spec.iterations):
        usage0 = resource.getrusage(resource.RUSAGE_SELF)
        attempts = 0
        while True:
            attempts += 1
            try:
                sample, trace = run_iteration(spec, iteration)
            except IterationFailure as exc:
                result.failures.append(FailureRecord(
                    experiment_id=spec.experiment_id, mode=spec.mode.value,
                    iteration=iteration, error=str(exc)))
                log.warning("%s/%s iteration %d failed (%s)",
                            spec.experiment_id, spec.mode.value, iteration,
                            exc)
                if attempts >= 2:
                    break
                continue
            result.samples.append(sample)
            result.qlog_trace = trace
            break
        usage1 = resource.getrusage(resource.RUSAGE_SELF)
        result.resources.append(ResourceRecord(
            experiment_id=spec.experiment_id, mode=spec.mode.value,
            iteration=iteration,
            cpu_user_s=usage1.ru_utime - usage0.ru_utime,
            max_rss_kib=usage1.ru_maxrss))
        if on_progress is not None:
            on_progress(spec, iteration)
    return result


def run_specs(specs: list[ExperimentSpec],
              on_progress=None) -> list[ExperimentResult]:
    # Iterations share nothing, but they are still run one at a time:
    # results must not depend on scheduling interleave.
    return [run_experiment(spec, on_progress=on_progress) for spec in specs]
