"""Command-line wiring: argument parsing, the in-process bench paths,
and one realtime broker/publisher round trip over real sockets."""

import json
import os
import select
import signal
import subprocess
import sys

import pytest

from h3pubsub import cli


def test_host_port_parsing():
    assert cli._host_port("127.0.0.1:4433") == ("127.0.0.1", 4433)
    assert cli._host_port(":9000") == ("127.0.0.1", 9000)
    with pytest.raises(Exception):
        cli._host_port("no-port")


def test_url_parsing():
    assert cli._parse_url("https://10.0.0.1:4433/topics/env-temp") == \
        ("10.0.0.1", 4433, "env-temp")
    with pytest.raises(SystemExit):
        cli._parse_url("http://10.0.0.1:4433/topics/env-temp")
    with pytest.raises(SystemExit):
        cli._parse_url("https://10.0.0.1:4433/other/env-temp")
    with pytest.raises(SystemExit):
        cli._parse_url("https://10.0.0.1/topics/env-temp")


def test_netlab_preset_with_overrides():
    args = cli._netlab_parser().parse_args(
        ["--upstream", "127.0.0.1:9", "--preset", "nbiot2",
         "--loss-pct", "2", "--seed", "7"])
    spec = cli._impairments_from_args(args)
    assert spec.delay_ms == 1000.0
    assert spec.rate_up_kbps == 159.0
    assert spec.loss_pct == 2.0
    assert spec.seed == 7


def test_bench_run_cli(tmp_path):
    ini = tmp_path / "matrix.ini"
    ini.write_text("[common]\nclasses = load\n[load]\ncounts = 2\n")
    out = tmp_path / "out"
    rc = cli.bench_main(["run", "--matrix", str(ini), "--iterations", "4",
                         "--out-dir", str(out), "--modes", "h3"])
    assert rc == 0
    assert (out / "iterations.csv").exists()
    rows = (out / "iterations.csv").read_text().splitlines()
    assert len(rows) == 1 + 4  # header + one spec X four iterations


def test_bench_qlog_cli(tmp_path, capsys):
    trace = tmp_path / "trace.qlog"
    events = [
        {"time": 0.0, "name": "recovery:metrics_updated",
         "data": {"congestion_window": 40960, "bytes_in_flight": 1200}},
        {"time": 0.5, "name": "transport:packet_sent", "data": {}},
        {"time": 2500.0, "name": "transport:packet_received", "data": {}},
    ]
    trace.write_text("\n".join(json.dumps(e) for e in events) + "\n")
    out = tmp_path / "series.csv"
    rc = cli.bench_main(["qlog", "--in", str(trace), "--out", str(out),
                         "--stall-threshold-ms", "1000"])
    assert rc == 0
    assert out.read_text().startswith("t_ms,cwnd,bytes_in_flight")
    assert "1 stalls" in capsys.readouterr().out


# --- realtime subprocess round trip ---

def _read_lines(proc, n, deadline_s=10.0):
    lines = []
    while len(lines) < n:
        ready, _, _ = select.select([proc.stdout], [], [], deadline_s)
        if not ready:
            raise TimeoutError(f"broker printed {lines!r} so far")
        line = proc.stdout.readline()
        if not line:
            raise AssertionError("broker exited early")
        lines.append(line.strip())
    return lines


@pytest.mark.realtime
def test_broker_publish_round_trip(tmp_path):
    creds = tmp_path / "creds.txt"
    creds.write_text("alice:s3cret\n")
    cert = tmp_path / "server.pub"
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    broker = subprocess.Popen(
        [sys.executable, "-c",
         "from h3pubsub.cli import broker_main; broker_main()",
         "--listen", "127.0.0.1:0", "--mq-listen", "127.0.0.1:0",
         "--creds", str(creds), "--cert", str(cert)],
        stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True,
        env=env)
    try:
        h3_line, mq_line, _key = _read_lines(broker, 3)
        h3_port = int(h3_line.rsplit(":", 1)[1])
        mq_port = int(mq_line.rsplit(":", 1)[1])

        pub = subprocess.run(
            [sys.executable, "-c",
             "from h3pubsub.cli import h3pub_main; h3pub_main()",
             "publish", "--url",
             f"https://127.0.0.1:{h3_port}/topics/env-temp",
             "--count", "3", "--size", "16", "--interval-ms", "5",
             "--user", "alice", "--pass", "s3cret",
             "--server-pub", str(cert)],
            capture_output=True, text=True, timeout=20, env=env)
        assert pub.returncode == 0, pub.stderr
        assert "published 3 x 16B" in pub.stdout

        mq = subprocess.run(
            [sys.executable, "-c",
             "from h3pubsub.cli import mqpub_main; mqpub_main()",
             "--addr", f"127.0.0.1:{mq_port}", "--topic", "env-temp",
             "--count", "3", "--size", "16", "--interval-ms", "5",
             "--qos", "1", "--user", "alice", "--pass", "s3cret",
             "--server-pub", str(cert)],
            capture_output=True, text=True, timeout=20, env=env)
        assert mq.returncode == 0, mq.stderr
        assert "qos1" in mq.stdout
    finally:
        broker.send_signal(signal.SIGINT)
        try:
            broker.wait(timeout=10)
        except subprocess.TimeoutExpired:
            broker.kill()
            raise
    assert broker.returncode == 0
