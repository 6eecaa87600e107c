"""Acceptance gate: ten verdicts, one test and one printed line each.

The protocol-comparison criteria run the full stack on the virtual
clock; the proxy-conformance criterion drives real sockets on the wall
clock, including a deliberate 10 s saturation soak.  Expect the module
to take a few minutes end to end.
"""

import asyncio
import dataclasses
import json
import math
import random
import statistics
import time

import pytest

from h3pubsub.auth import CredentialStore
from h3pubsub.bench.experiments import ExperimentSpec, Mode
from h3pubsub.bench.qlog_analysis import analyze_qlog
from h3pubsub.bench.runner import run_experiment
from h3pubsub.bench.stats import summarize
from h3pubsub.clockutil import run_virtual
from h3pubsub.core import TopicRegistry
from h3pubsub.governor import StreamBudget
from h3pubsub.h3.broker import H3Broker
from h3pubsub.h3.client import H3Client, H3StatusError
from h3pubsub.netlab.impair import (Direction, Drop, ImpairmentEngine,
                                    ImpairmentSpec)
from h3pubsub.netlab.proxy import UdpImpairmentProxy
from h3pubsub.transport.crypto import ServerIdentity
from h3pubsub.transport.endpoint import (Server, bind_server_to_link,
                                         connect_over_link)
from h3pubsub.transport.memnet import MemLink
from h3pubsub.tuning import stock_tuning

SEED = 20_240_001


def _verdict(criterion: int, ok: bool, detail: str) -> None:
    print(f"\ncriterion {criterion:2d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def _run(eid: str, mode: Mode, count: int, size: int, *, rtt: int = 2000,
         loss: float = 0.0, iterations: int, seed: int = SEED):
    spec = ExperimentSpec(experiment_id=eid, mode=mode, message_count=count,
                          message_size=size, rtt_ms=rtt, loss_pct=loss,
                          iterations=iterations, seed_base=seed)
    return run_experiment(spec)


def _median(samples, attr: str) -> float:
    return statistics.median(getattr(s, attr) for s in samples)


def test_criterion_01_first_data_frame_gap():
    meds = {}
    for mode in Mode:
        res = _run("load-c1-s32", mode, 1, 32, iterations=20)
        assert len(res.samples) >= 20, res.failures
        meds[mode] = _median(res.samples, "ttfdf_ms")
    gap_ff = meds[Mode.MQ_FF] - meds[Mode.H3]
    gap_ad = meds[Mode.MQ_AD] - meds[Mode.H3]
    ok = 1700 <= gap_ff <= 2300 and 1700 <= gap_ad <= 2300
    _verdict(1, ok,
             f"median ttfdf gap vs h3 over 20 iterations: "
             f"mq-ff {gap_ff:.0f} ms, mq-ad {gap_ad:.0f} ms "
             f"(required within [1700, 2300])")


def test_criterion_02_exec_time_ordering_under_rtt_sweep():
    rtts = (500, 1000, 1500, 2000)
    med = {mode: [] for mode in Mode}
    for rtt in rtts:
        for mode in Mode:
            res = _run(f"rtt-{rtt}ms", mode, 50, 32, rtt=rtt, iterations=5)
            assert res.samples, res.failures
            med[mode].append(_median(res.samples, "exec_time_ms"))
    ordered = all(med[Mode.H3][i] < med[Mode.MQ_FF][i]
                  and med[Mode.H3][i] < med[Mode.MQ_AD][i]
                  for i in range(len(rtts)))
    adv_ff = [med[Mode.MQ_FF][i] - med[Mode.H3][i] for i in range(len(rtts))]
    adv_ad = [med[Mode.MQ_AD][i] - med[Mode.H3][i] for i in range(len(rtts))]
    grows = all(nxt >= prev * 0.9 for seq in (adv_ff, adv_ad)
                for prev, nxt in zip(seq, seq[1:]))
    ok = ordered and grows
    _verdict(2, ok,
             f"h3 fastest at every rtt={list(rtts)}: {ordered}; "
             f"advantage ms vs mq-ff {[round(a) for a in adv_ff]}, "
             f"vs mq-ad {[round(a) for a in adv_ad]} "
             f"(monotone growth within 10%)")


def test_criterion_03_datagram_overhead_ratio():
    totals = {}
    for mode in Mode:
        res = _run("load-c100-s32", mode, 100, 32, iterations=3)
        assert res.samples, res.failures
        totals[mode] = statistics.median(
            s.datagrams_up + s.datagrams_down for s in res.samples)
    r_h3 = totals[Mode.H3] / totals[Mode.MQ_FF]
    r_ad = totals[Mode.MQ_AD] / totals[Mode.MQ_FF]
    ok = r_h3 >= 1.2 and r_ad >= 1.2
    _verdict(3, ok,
             f"total datagrams for 100x32B: h3/mq-ff {r_h3:.2f}, "
             f"mq-ad/mq-ff {r_ad:.2f} (each required >= 1.2)")


def test_criterion_04_stream_credit_governor_properties():
    t0 = time.monotonic()
    rng = random.Random(SEED)

    # Advertisement count law across the sampled parameter space.
    for _ in range(400):
        m = rng.randint(1, 256)
        fraction = rng.choice((0.25, 0.5, 0.75))
        k = rng.randint(0, 10 * m)
        budget = StreamBudget(m, fraction)
        adverts = sum(1 for _ in range(k)
                      if budget.on_stream_closed() is not None)
        watermark = math.ceil(fraction * m)
        assert adverts == k // watermark == budget.adverts_sent, \
            (m, fraction, k)

    # Liveness: a blocked peer regains credit within one watermark of
    # closes, under randomized open/close interleavings.
    for _ in range(120):
        m = rng.randint(1, 64)
        fraction = rng.choice((0.25, 0.5, 0.75))
        budget = StreamBudget(m, fraction)
        open_now = 0
        for _ in range(400):
            if budget.peer_available_streams() > 0 and \
                    (open_now == 0 or rng.random() < 0.6):
                budget.on_stream_opened()
                open_now += 1
            elif open_now:
                budget.on_stream_closed()
                open_now -= 1
            if budget.peer_available_streams() == 0:
                closes = 0
                while budget.peer_available_streams() == 0:
                    assert open_now > 0, "starved with nothing to close"
                    budget.on_stream_closed()
                    open_now -= 1
                    closes += 1
                assert closes <= budget.watermark

    # Watermark of one stream degenerates to the advertise-per-close
    # baseline.
    for m in (1, 2, 3, 4):
        budget = StreamBudget(m, 0.25)
        assert budget.watermark == 1
        k = rng.randint(1, 10 * m)
        for _ in range(k):
            assert budget.on_stream_closed() is not None
        assert budget.adverts_sent == k

    elapsed = time.monotonic() - t0
    ok = elapsed < 10.0
    _verdict(4, ok,
             f"advert-count law (400 cases), liveness (120 walks), and "
             f"1:1 equivalence all hold in {elapsed:.2f} s (< 10 s)")


def test_criterion_05_connection_level_auth():
    creds = CredentialStore({"alice": "s3cret"})

    async def good_rig():
        loop = asyncio.get_event_loop()
        registry = TopicRegistry()
        registry.create_topic("sensor")
        broker = H3Broker(registry, creds, stock_tuning(),
                          ServerIdentity.generate(), loop=loop)
        link = MemLink(ImpairmentSpec(), loop=loop)
        bind_server_to_link(broker.server, link)
        conn = await connect_over_link(stock_tuning(), link, loop=loop)
        client = H3Client(conn, user="alice", password="s3cret")
        for _ in range(50):
            await asyncio.sleep(0.01)
            await client.publish("sensor", b"x" * 32)
        await conn.close()
        return broker, client

    broker, client = run_virtual(good_rig())
    one_header = (client.auth_headers_sent == 1
                  and broker.auth_headers_received == 1)
    one_check = broker.auth_cache.checks_performed == 1
    served = broker.requests_served == 50

    async def bad_rig():
        loop = asyncio.get_event_loop()
        registry = TopicRegistry()
        broker = H3Broker(registry, creds, stock_tuning(),
                          ServerIdentity.generate(), loop=loop)
        link = MemLink(ImpairmentSpec(), loop=loop)
        bind_server_to_link(broker.server, link)
        conn = await connect_over_link(stock_tuning(), link, loop=loop)
        client = H3Client(conn, user="alice", password="wrong")
        statuses = []
        for attempt in (client.create_topic("secrets"),
                        client.publish("secrets", b"leak")):
            try:
                await attempt
            except H3StatusError as exc:
                statuses.append(exc.status)
        await conn.close()
        return registry, statuses

    registry, statuses = run_virtual(bad_rig())
    rejected = statuses == [401, 401] and registry.topic_names() == ()

    ok = one_header and one_check and served and rejected
    _verdict(5, ok,
             f"50 publishes: headers sent/received "
             f"{client.auth_headers_sent}/{broker.auth_headers_received}, "
             f"credential checks {broker.auth_cache.checks_performed} "
             f"(1 required); wrong creds -> {statuses} with "
             f"{len(registry.topic_names())} topic mutations")


def test_criterion_06_initial_retransmit_tuning():
    def initials_before_first_reply(guess_ms: int) -> int:
        async def main():
            loop = asyncio.get_event_loop()
            link = MemLink(ImpairmentSpec(delay_ms=1000.0), loop=loop)
            server = Server(stock_tuning(), ServerIdentity.generate(),
                            lambda conn, stream: None, loop=loop)
            bind_server_to_link(server, link)
            tuning = dataclasses.replace(stock_tuning(),
                                         initial_rtt_guess_ms=guess_ms)
            conn = await connect_over_link(tuning, link, loop=loop)
            await conn.close()
            return link

        link = run_virtual(main())
        timeline = link.engine.timeline
        first_down = min((e.delivered_at_ms for e in timeline
                          if e.direction is Direction.DOWN
                          and e.delivered_at_ms is not None),
                         default=float("inf"))
        return sum(1 for e in timeline
                   if e.direction is Direction.UP and e.size == 1200
                   and e.offered_at_ms < first_down)

    eager = initials_before_first_reply(100)
    tuned = initials_before_first_reply(1500)
    ok = eager >= 3 and tuned == 1
    _verdict(6, ok,
             f"hellos on the wire before the first server datagram at "
             f"rtt 2000: {eager} with a 100 ms guess (>= 3 required), "
             f"{tuned} with 1500 ms (exactly 1 required)")


class _Collector(asyncio.DatagramProtocol):
    def __init__(self):
        self.transport = None
        self.peer = None
        self.bytes = 0
        self.count = 0
        self.first = None
        self.last = None
        self.stamps = []

    def connection_made(self, transport):
        self.transport = transport

    def datagram_received(self, data, addr):
        now = time.monotonic()
        if self.peer is None:
            self.peer = addr
        if self.first is None:
            self.first = now
        self.last = now
        self.bytes += len(data)
        self.count += 1
        self.stamps.append((now, data))


async def _proxy_pair(spec):
    loop = asyncio.get_running_loop()
    _, upstream = await loop.create_datagram_endpoint(
        _Collector, local_addr=("127.0.0.1", 0))
    addr = upstream.transport.get_extra_info("sockname")[:2]
    proxy = UdpImpairmentProxy(upstream=addr, spec=spec)
    listen = await proxy.start()
    _, client = await loop.create_datagram_endpoint(
        _Collector, local_addr=("127.0.0.1", 0))
    return upstream, proxy, listen, client


@pytest.mark.realtime
def test_criterion_07_impairment_proxy_conformance():
    # Part 1: rate shaping, 10 s saturation in both directions.
    async def saturation():
        upstream, proxy, listen, client = await _proxy_pair(
            ImpairmentSpec(rate_up_kbps=159.0, rate_down_kbps=127.0))
        payload = b"\x00" * 1000
        end = time.monotonic() + 10.0
        while time.monotonic() < end:
            for _ in range(4):
                client.transport.sendto(payload, listen)
            if upstream.peer is not None:
                for _ in range(4):
                    upstream.transport.sendto(payload, upstream.peer)
            await asyncio.sleep(0.025)
        up_rate = upstream.bytes / (upstream.last - upstream.first)
        down_rate = client.bytes / (client.last - client.first)
        await proxy.stop()
        upstream.transport.close()
        client.transport.close()
        return up_rate, down_rate

    up_rate, down_rate = asyncio.run(saturation())
    up_target = 159_000 / 8.0
    down_target = 127_000 / 8.0
    rates_ok = (abs(up_rate - up_target) <= 0.05 * up_target
                and abs(down_rate - down_target) <= 0.05 * down_target)

    # Part 2: seeded loss over 10000 datagrams, 3 sigma around 400.
    engine = ImpairmentEngine(ImpairmentSpec(loss_pct=4.0, seed=SEED))
    drops = 0
    t = 0.0
    for _ in range(10_000):
        if isinstance(engine.process(Direction.UP, 100, t), Drop):
            drops += 1
        t += 5.0
    sigma = math.sqrt(10_000 * 0.04 * 0.96)
    loss_ok = abs(drops - 400) <= 3 * sigma

    # Part 3: pure delay, one-way 1000 +- 15 ms unthrottled.
    async def delay_probe():
        upstream, proxy, listen, client = await _proxy_pair(
            ImpairmentSpec(delay_ms=1000.0))
        sends = []
        for i in range(12):
            sends.append(time.monotonic())
            client.transport.sendto(bytes([i]) * 64, listen)
            await asyncio.sleep(0.15)
        while upstream.count < len(sends):
            await asyncio.sleep(0.01)
        one_way = [(recv - sends[data[0]]) * 1000.0
                   for recv, data in upstream.stamps]
        await proxy.stop()
        upstream.transport.close()
        client.transport.close()
        return one_way

    one_way = asyncio.run(delay_probe())
    delay_med = statistics.median(one_way)
    delay_ok = 985.0 <= delay_med <= 1015.0

    ok = rates_ok and loss_ok and delay_ok
    _verdict(7, ok,
             f"10 s saturation: up {up_rate:.0f} B/s vs {up_target:.0f}, "
             f"down {down_rate:.0f} vs {down_target:.0f} (5% tolerance); "
             f"drops {drops}/10000 (400 +- {3 * sigma:.0f}); "
             f"one-way delay median {delay_med:.1f} ms (1000 +- 15)")


def test_criterion_08_statistics_oracle():
    def _med(sorted_vals):
        n = len(sorted_vals)
        if n % 2:
            return float(sorted_vals[n // 2])
        return (sorted_vals[n // 2 - 1] + sorted_vals[n // 2]) / 2.0

    def brute(vals):
        s = sorted(float(v) for v in vals)
        n = len(s)
        med = _med(s)
        q1 = _med(s[: n // 2])
        q3 = _med(s[(n + 1) // 2:])
        iqr = q3 - q1
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        outliers = tuple(v for v in s if v < lo or v > hi)
        kept = [v for v in s if lo <= v <= hi]
        return (sum(s) / n, med, q1, q3, kept[0], kept[-1], outliers)

    rng = random.Random(SEED)
    mismatches = 0
    for _ in range(1000):
        n = rng.randint(4, 50)
        if rng.random() < 0.3:
            vals = [rng.randint(-50, 50) for _ in range(n)]
        else:
            vals = [rng.gauss(0, 100) for _ in range(n)]
        st = summarize(vals)
        got = (st.mean, st.median, st.q1, st.q3, st.whisker_low,
               st.whisker_high, st.outliers)
        want = brute(vals)
        if not all(math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)
                   for a, b in zip(got[:6], want[:6])) or \
                got[6] != want[6]:
            mismatches += 1

    worked = summarize([1, 2, 3, 4, 5, 6, 7, 8, 9, 100])
    example_ok = (worked.median == 5.5 and worked.q1 == 3
                  and worked.q3 == 8 and worked.outliers == (100.0,)
                  and worked.whisker_low == 1 and worked.whisker_high == 9
                  and worked.mean == 14.5)

    ok = mismatches == 0 and example_ok
    _verdict(8, ok,
             f"{mismatches}/1000 random datasets disagree with the "
             f"brute-force reference; worked example "
             f"median {worked.median}, q1 {worked.q1}, q3 {worked.q3}, "
             f"outliers {worked.outliers}")


def test_criterion_09_qlog_stall_detection():
    def trace(events):
        return "\n".join(json.dumps(e) for e in events) + "\n"

    gap_events = [
        {"time": 0.0, "name": "recovery:metrics_updated",
         "data": {"congestion_window": 40960, "bytes_in_flight": 4800}},
        {"time": 50.0, "name": "transport:packet_sent", "data": {}},
        {"time": 2350.0, "name": "transport:packet_received", "data": {}},
        {"time": 2400.0, "name": "transport:packet_sent", "data": {}},
    ]
    blocked = analyze_qlog(trace(gap_events))
    one_stall = (len(blocked.stalls) == 1
                 and abs(blocked.stalls[0].duration_ms - 2300.0) <= 50.0)

    smooth_events = [{"time": 0.0, "name": "recovery:metrics_updated",
                      "data": {"congestion_window": 40960,
                               "bytes_in_flight": 2400}}]
    smooth_events += [{"time": 200.0 * i, "name": "transport:packet_sent",
                       "data": {}} for i in range(1, 26)]
    clean = analyze_qlog(trace(smooth_events))
    no_stalls = len(clean.stalls) == 0

    ok = one_stall and no_stalls
    durations = [round(s.duration_ms) for s in blocked.stalls]
    _verdict(9, ok,
             f"gapped trace -> stalls {durations} ms "
             f"(one of 2300 +- 50 required); continuous trace -> "
             f"{len(clean.stalls)} stalls")


def test_criterion_10_loss_class_variability():
    iqr = {}
    samples_seen = {}
    for loss, iterations in ((0.0, 8), (6.0, 10)):
        for mode in Mode:
            res = _run(f"loss-{loss:g}pct", mode, 50, 2048,
                       loss=loss, iterations=iterations)
            assert len(res.samples) >= 4, \
                (mode, loss, [f.error for f in res.failures])
            iqr[mode, loss] = summarize(res.samples,
                                        key="exec_time_ms").iqr
            samples_seen[mode, loss] = len(res.samples)
    widened = all(iqr[mode, 6.0] >= 2.0 * iqr[mode, 0.0] for mode in Mode)
    spread = all(iqr[mode, 6.0] > 0.0 for mode in Mode)
    ok = widened and spread
    detail = ", ".join(
        f"{mode.value} {iqr[mode, 0.0]:.1f}->{iqr[mode, 6.0]:.1f} ms"
        for mode in Mode)
    _verdict(10, ok,
             f"exec-time IQR at 0% vs 6% loss: {detail} "
             f"(each required to at least double and be nonzero)")
