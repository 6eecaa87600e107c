"""Command-line entry points.

Five binaries share this module: ``broker`` (the publish-subscribe
server, optionally also speaking the queue protocol on a second port),
``h3pub`` and ``mqpub`` (publishers, plus an h3 subscriber), ``netlab``
(the UDP impairment proxy), and ``bench`` (the experiment matrix and
qlog analysis).  All networked commands run on the real clock over UDP;
the bench matrix runs in-process on virtual time.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import logging
import signal
import sys
import time
from pathlib import Path

from .auth import CredentialStore
from .bench.experiments import (DEFAULT_ITERATIONS, MatrixConfig,
                                load_matrix_config, matrix, parse_modes)
from .bench.qlog_analysis import (DEFAULT_STALL_THRESHOLD_MS, analyze_qlog,
                                  series_to_csv)
from .bench.report import emit_report
from .bench.runner import run_specs
from .core import (DEFAULT_RETAIN_DEPTH, TopicRegistry)
from .events import event_log_export
from .h3.broker import H3Broker
from .h3.client import H3Client
from .h3.framing import parse_topic_path
from .mq.broker import MqBroker
from .mq.client import MqClient
from .netlab.impair import ImpairmentSpec, nbiot2_impairments
from .netlab.proxy import UdpImpairmentProxy
from .transport.crypto import ServerIdentity, load_public_pem
from .transport.endpoint import connect_udp, serve_udp
from .tuning import (TuningProfile, derive_tuning, load_tuning_overrides,
                     network_profile)

log = logging.getLogger(__name__)


def _host_port(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(
            f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _tuning_from_args(args: argparse.Namespace) -> TuningProfile:
    tuning = derive_tuning(network_profile(args.profile))
    if getattr(args, "tuning_config", None):
        tuning = load_tuning_overrides(args.tuning_config, tuning)
    return tuning


def _payload(size: int, index: int) -> bytes:
    return bytes((index + i) & 0xFF for i in range(size))


def _write_events(path: str | None, conn) -> None:
    if path:
        Path(path).write_text(event_log_export(conn.events))


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")


# ----------------------------------------------------------------------
# broker


def _broker_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="broker", description="publish-subscribe broker")
    p.add_argument("--listen", type=_host_port, default=("127.0.0.1", 4433),
                   metavar="IP:PORT")
    p.add_argument("--mq-listen", type=_host_port, metavar="IP:PORT",
                   help="also accept queue-protocol sessions here")
    p.add_argument("--cert", metavar="PEM",
                   help="public key file; written if missing")
    p.add_argument("--key", metavar="PEM",
                   help="private key file (ephemeral when omitted)")
    p.add_argument("--creds", required=True, metavar="FILE",
                   help="user:password lines")
    p.add_argument("--profile", default="loopback",
                   help="tuning profile name (nbiot2, loopback)")
    p.add_argument("--tuning-config", metavar="FILE",
                   help="key=value overrides applied on top of --profile")
    p.add_argument("--retain", type=int, default=DEFAULT_RETAIN_DEPTH,
                   metavar="N", help="retained messages per topic")
    p.add_argument("--qlog-dir", metavar="DIR",
                   help="write one qlog trace per closed connection")
    p.add_argument("--events-out", metavar="CSV",
                   help="append per-connection event logs here on close")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _load_identity(args: argparse.Namespace) -> ServerIdentity:
    if args.key:
        identity = ServerIdentity.from_pem_file(args.key)
    else:
        identity = ServerIdentity.generate()
    if args.cert:
        cert = Path(args.cert)
        if args.key and cert.exists():
            if load_public_pem(cert) != identity.public_bytes:
                raise SystemExit(f"{cert} does not match --key")
        else:
            # Ephemeral identity: the file just tells clients the
            # current public key, so rewrite whatever is there.
            identity.save_public_pem(cert)
    return identity


def _attach_sinks(server, args: argparse.Namespace) -> None:
    qlog_dir = Path(args.qlog_dir) if args.qlog_dir else None
    if qlog_dir:
        qlog_dir.mkdir(parents=True, exist_ok=True)
    events_out = Path(args.events_out) if args.events_out else None

    def sink(conn) -> None:
        cid = conn.conn_id.hex()
        if qlog_dir:
            (qlog_dir / f"{cid}.qlog").write_text(conn.qlog_ndjson())
        if events_out:
            with events_out.open("a") as fh:
                fh.write(f"# conn {cid}\n")
                fh.write(event_log_export(conn.events))

    if qlog_dir or events_out:
        server.add_close_hook(sink)


async def _broker_async(args: argparse.Namespace) -> int:
    identity = _load_identity(args)
    creds = CredentialStore.from_file(args.creds)
    registry = TopicRegistry(retain_depth=args.retain)
    tuning = _tuning_from_args(args)
    qlog = bool(args.qlog_dir)

    h3 = H3Broker(registry, creds, tuning, identity, qlog_enabled=qlog)
    _attach_sinks(h3.server, args)
    transports = []
    transport, addr = await serve_udp(h3.server, *args.listen)
    transports.append(transport)
    print(f"h3 broker on {addr[0]}:{addr[1]}")

    mq = None
    if args.mq_listen:
        mq = MqBroker(registry, creds, tuning, identity, qlog_enabled=qlog)
        _attach_sinks(mq.server, args)
        transport, addr = await serve_udp(mq.server, *args.mq_listen)
        transports.append(transport)
        print(f"mq broker on {addr[0]}:{addr[1]}")

    print(f"server public key: {identity.public_bytes.hex()}")

    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        loop.add_signal_handler(sig, stop.set)
    await stop.wait()

    print("shutting down")
    await h3.shutdown()
    if mq is not None:
        await mq.shutdown()
    for transport in transports:
        transport.close()
    return 0


def broker_main(argv: list[str] | None = None) -> int:
    args = _broker_parser().parse_args(argv)
    _setup_logging(args.verbose)
    return asyncio.run(_broker_async(args))


# ----------------------------------------------------------------------
# h3pub


def _h3pub_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="h3pub",
                                description="publish or subscribe over h3")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--url", required=True,
                        metavar="https://HOST:PORT/topics/NAME")
        sp.add_argument("--user")
        sp.add_argument("--pass", dest="password")
        sp.add_argument("--profile", default="loopback")
        sp.add_argument("--server-pub", metavar="PEM",
                        help="pin the broker public key")
        sp.add_argument("--events-out", metavar="CSV")
        sp.add_argument("-v", "--verbose", action="store_true")

    pub = sub.add_parser("publish")
    common(pub)
    pub.add_argument("--count", type=int, default=1)
    pub.add_argument("--size", type=int, default=32, metavar="BYTES")
    pub.add_argument("--interval-ms", type=int, default=100)

    subp = sub.add_parser("subscribe")
    common(subp)
    subp.add_argument("--out", metavar="FILE",
                      help="write seq,payload_hex rows (default stdout)")
    return p


def _parse_url(url: str) -> tuple[str, int, str]:
    from urllib.parse import urlsplit
    parts = urlsplit(url)
    if parts.scheme not in ("https", "h3"):
        raise SystemExit(f"unsupported scheme {parts.scheme!r}")
    if not parts.hostname or not parts.port:
        raise SystemExit("url must carry an explicit host and port")
    topic = parse_topic_path(parts.path)
    if topic is None:
        raise SystemExit(f"path must look like /topics/<name>, "
                         f"got {parts.path!r}")
    return parts.hostname, parts.port, topic


async def _h3_publish(args: argparse.Namespace) -> int:
    host, port, topic = _parse_url(args.url)
    pinned = load_public_pem(args.server_pub) if args.server_pub else None
    tuning = _tuning_from_args(args)
    conn, transport = await connect_udp(tuning, host, port,
                                        pinned_server_key=pinned)
    try:
        client = H3Client(conn, user=args.user, password=args.password)
        await client.create_topic(topic)
        t0 = time.monotonic()
        first_seq = last_seq = None
        for k in range(args.count):
            await asyncio.sleep(args.interval_ms / 1000.0)
            seq = await client.publish(topic, _payload(args.size, k))
            first_seq = seq if first_seq is None else first_seq
            last_seq = seq
        elapsed = time.monotonic() - t0
        print(f"published {args.count} x {args.size}B to {topic} "
              f"(seq {first_seq}..{last_seq}) in {elapsed:.3f}s")
    finally:
        await conn.close()
        transport.close()
        _write_events(args.events_out, conn)
    return 0


async def _h3_subscribe(args: argparse.Namespace) -> int:
    host, port, topic = _parse_url(args.url)
    pinned = load_public_pem(args.server_pub) if args.server_pub else None
    tuning = _tuning_from_args(args)
    conn, transport = await connect_udp(tuning, host, port,
                                        pinned_server_key=pinned)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        client = H3Client(conn, user=args.user, password=args.password)
        out.write("seq,payload_hex\n")
        async for seq, payload in client.subscribe(topic):
            out.write(f"{seq},{payload.hex()}\n")
            out.flush()
    finally:
        if out is not sys.stdout:
            out.close()
        await conn.close()
        transport.close()
        _write_events(args.events_out, conn)
    return 0


def h3pub_main(argv: list[str] | None = None) -> int:
    args = _h3pub_parser().parse_args(argv)
    _setup_logging(args.verbose)
    runner = _h3_publish if args.command == "publish" else _h3_subscribe
    try:
        return asyncio.run(runner(args))
    except KeyboardInterrupt:
        return 130


# ----------------------------------------------------------------------
# mqpub


def _mqpub_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mqpub",
                                description="publish over the queue protocol")
    p.add_argument("--addr", type=_host_port, required=True,
                   metavar="HOST:PORT")
    p.add_argument("--topic", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--size", type=int, default=32, metavar="BYTES")
    p.add_argument("--interval-ms", type=int, default=100)
    p.add_argument("--qos", type=int, choices=(0, 1), default=0)
    p.add_argument("--user")
    p.add_argument("--pass", dest="password")
    p.add_argument("--client-id", default="mqpub")
    p.add_argument("--profile", default="loopback")
    p.add_argument("--server-pub", metavar="PEM")
    p.add_argument("--events-out", metavar="CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


async def _mq_publish(args: argparse.Namespace) -> int:
    pinned = load_public_pem(args.server_pub) if args.server_pub else None
    tuning = _tuning_from_args(args)
    conn, transport = await connect_udp(tuning, *args.addr,
                                        pinned_server_key=pinned)
    try:
        client = MqClient(conn, client_id=args.client_id, user=args.user,
                          password=args.password)
        await client.start()
        t0 = time.monotonic()
        for k in range(args.count):
            await asyncio.sleep(args.interval_ms / 1000.0)
            payload = _payload(args.size, k)
            if args.qos == 0:
                client.publish_qos0(args.topic, payload)
            else:
                await client.publish_qos1(args.topic, payload)
        elapsed = time.monotonic() - t0
        await client.disconnect()
        print(f"published {args.count} x {args.size}B to {args.topic} "
              f"qos{args.qos} in {elapsed:.3f}s")
    finally:
        await conn.close()
        transport.close()
        _write_events(args.events_out, conn)
    return 0


def mqpub_main(argv: list[str] | None = None) -> int:
    args = _mqpub_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return asyncio.run(_mq_publish(args))
    except KeyboardInterrupt:
        return 130


# ----------------------------------------------------------------------
# netlab


def _netlab_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="netlab", description="UDP network impairment proxy")
    p.add_argument("--listen", type=_host_port, default=("127.0.0.1", 0),
                   metavar="IP:PORT")
    p.add_argument("--upstream", type=_host_port, required=True,
                   metavar="IP:PORT")
    p.add_argument("--preset", choices=("nbiot2",),
                   help="start from a named impairment preset")
    p.add_argument("--delay-ms", type=float)
    p.add_argument("--jitter-ms", type=float)
    p.add_argument("--loss-pct", type=float)
    p.add_argument("--rate-kbit-up", type=float)
    p.add_argument("--rate-kbit-down", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--counters-out", metavar="CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _impairments_from_args(args: argparse.Namespace) -> ImpairmentSpec:
    spec = nbiot2_impairments() if args.preset == "nbiot2" \
        else ImpairmentSpec()
    overrides = {
        "delay_ms": args.delay_ms,
        "jitter_ms": args.jitter_ms,
        "loss_pct": args.loss_pct,
        "rate_up_kbps": args.rate_kbit_up,
        "rate_down_kbps": args.rate_kbit_down,
        "seed": args.seed,
    }
    fields = {k: v for k, v in overrides.items() if v is not None}
    return dataclasses.replace(spec, **fields) if fields else spec


async def _netlab_async(args: argparse.Namespace) -> int:
    proxy = UdpImpairmentProxy(upstream=args.upstream,
                               spec=_impairments_from_args(args),
                               listen=args.listen)
    addr = await proxy.start()
    print(f"impairing {addr[0]}:{addr[1]} -> "
          f"{args.upstream[0]}:{args.upstream[1]}")

    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        loop.add_signal_handler(sig, stop.set)
    await stop.wait()

    await proxy.stop()
    text = proxy.export_counters(args.counters_out)
    if not args.counters_out:
        sys.stdout.write(text)
    return 0


def netlab_main(argv: list[str] | None = None) -> int:
    args = _netlab_parser().parse_args(argv)
    _setup_logging(args.verbose)
    return asyncio.run(_netlab_async(args))


# ----------------------------------------------------------------------
# bench


def _bench_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="bench", description="experiment matrix and qlog analysis")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run")
    run.add_argument("--matrix", metavar="FILE",
                     help="class-sectioned overrides (defaults when omitted)")
    run.add_argument("--iterations", type=int, metavar="N",
                     help=f"per-spec iterations (default {DEFAULT_ITERATIONS})")
    run.add_argument("--out-dir", required=True, metavar="DIR")
    run.add_argument("--modes", metavar="h3,mq-ff,mq-ad",
                     help="restrict protocol modes")
    run.add_argument("-v", "--verbose", action="store_true")

    qlog = sub.add_parser("qlog")
    qlog.add_argument("--in", dest="trace", required=True, metavar="FILE")
    qlog.add_argument("--out", required=True, metavar="CSV")
    qlog.add_argument("--stall-threshold-ms", type=float,
                      default=DEFAULT_STALL_THRESHOLD_MS)
    qlog.add_argument("-v", "--verbose", action="store_true")
    return p


def _bench_run(args: argparse.Namespace) -> int:
    config = load_matrix_config(args.matrix) if args.matrix \
        else MatrixConfig()
    if args.iterations is not None:
        config.iterations = args.iterations
    if args.modes:
        config.modes = parse_modes(args.modes)
    specs = matrix(config)
    total = sum(s.iterations for s in specs)
    done = 0
    t0 = time.monotonic()

    def progress(spec, iteration) -> None:
        nonlocal done
        done += 1
        if done % 10 == 0 or done == total:
            elapsed = time.monotonic() - t0
            print(f"\r{done}/{total} iterations "
                  f"({spec.experiment_id}/{spec.mode.value}) "
                  f"{elapsed:.0f}s", end="", file=sys.stderr)

    results = run_specs(specs, on_progress=progress)
    print(file=sys.stderr)
    written = emit_report(results, args.out_dir)
    failures = sum(len(r.failures) for r in results)
    samples = sum(len(r.samples) for r in results)
    print(f"{len(specs)} specs, {samples} samples, {failures} failed "
          f"iterations; {len(written)} report files in {args.out_dir}")
    return 0


def _bench_qlog(args: argparse.Namespace) -> int:
    series = analyze_qlog(Path(args.trace).read_text(),
                          stall_threshold_ms=args.stall_threshold_ms)
    Path(args.out).write_text(series_to_csv(series))
    for stall in series.stalls:
        print(f"stall {stall.start_ms:.1f}..{stall.end_ms:.1f} ms "
              f"({stall.duration_ms:.1f} ms)")
    print(f"{len(series.samples)} samples, {len(series.stalls)} stalls, "
          f"total stalled {series.total_stall_ms:.1f} ms")
    return 0


def bench_main(argv: list[str] | None = None) -> int:
    args = _bench_parser().parse_args(argv)
    _setup_logging(getattr(args, "verbose", False))
    if args.command == "run":
        return _bench_run(args)
    return _bench_qlog(args)


if __name__ == "__main__":
    sys.exit(bench_main())
