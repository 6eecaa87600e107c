"""Transport tuning profiles and link presets.

Stock QUIC stacks assume datacenter-ish paths: 100 ms initial RTT guess,
25 ms ack delay, tens-of-seconds handshake budgets.  On a narrowband
link with a 2 s round trip those defaults burn the radio with spurious
Initial retransmits and acks.  A TuningProfile bundles every knob we
move; derive_tuning() computes one from measured link characteristics.

All values are integral milliseconds.  Profiles are frozen; derive a new
one rather than mutating.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from pathlib import Path


class CipherSuite(enum.Enum):
    CHACHA20_POLY1305_SHA256 = "chacha20-poly1305-sha256"


class InvalidProfile(ValueError):
    """Network or tuning parameters out of range."""


@dataclass(frozen=True)
class NetworkProfile:
    """Link characteristics of the deployment path."""

    name: str
    downlink_rate_kbps: float
    uplink_rate_kbps: float
    rtt_ms: int
    mtu: int = 1500

    def __post_init__(self) -> None:
        if self.downlink_rate_kbps <= 0 or self.uplink_rate_kbps <= 0:
            raise InvalidProfile("link rates must be positive")
        if self.rtt_ms < 0:
            raise InvalidProfile("rtt must be >= 0")
        if self.mtu < 64:
            raise InvalidProfile("mtu too small")


@dataclass(frozen=True)
class TuningProfile:
    """Every transport knob the stack exposes, in one value object."""

    expected_rtt_ms: int
    initial_rtt_guess_ms: int
    max_ack_delay_ms: int
    handshake_timeout_ms: int
    handshake_idle_timeout_ms: int
    min_remote_idle_timeout_ms: int
    max_incoming_streams: int = 100
    watermark_fraction: float = 0.5
    cipher_suite: CipherSuite = CipherSuite.CHACHA20_POLY1305_SHA256
    qpack_dynamic_table: bool = False
    zero_rtt_enabled: bool = False
    pmtud_enabled: bool = True

    def __post_init__(self) -> None:
        if not 100 <= self.initial_rtt_guess_ms <= 10000:
            raise InvalidProfile("initial_rtt_guess outside [100, 10000] ms")
        if self.handshake_idle_timeout_ms < 2 * self.expected_rtt_ms:
            raise InvalidProfile("handshake idle timeout below 2 x RTT")
        if self.handshake_timeout_ms < self.handshake_idle_timeout_ms:
            raise InvalidProfile("handshake timeout below its idle timeout")
        if self.max_incoming_streams < 1:
            raise InvalidProfile("max_incoming_streams must be >= 1")
        if not 0.0 < self.watermark_fraction <= 1.0:
            raise InvalidProfile("watermark_fraction must be in (0, 1]")


def nbiot_profile() -> NetworkProfile:
    """CAT NB2 narrowband cellular: asymmetric kilobit rates, 2 s RTT."""
    return NetworkProfile(name="nbiot2", downlink_rate_kbps=127.0,
                          uplink_rate_kbps=159.0, rtt_ms=2000)


def loopback_profile() -> NetworkProfile:
    return NetworkProfile(name="loopback", downlink_rate_kbps=1_000_000.0,
                          uplink_rate_kbps=1_000_000.0, rtt_ms=0)


_BUILTIN_NETWORKS = {
    "nbiot2": nbiot_profile,
    "loopback": loopback_profile,
}


def network_profile(name: str) -> NetworkProfile:
    try:
        return _BUILTIN_NETWORKS[name]()
    except KeyError:
        raise InvalidProfile(f"unknown network profile {name!r}") from None


def derive_tuning(net: NetworkProfile) -> TuningProfile:
    """Scale the transport's timers to the link's round-trip time.

    The RTT guess sits slightly under the expected RTT so a genuinely
    lost Initial is not over-waited, clamped to the stack's sane range.
    Handshake and idle budgets get multiples of the RTT with absolute
    floors so fast links keep the stock values.
    """
    rtt = net.rtt_ms
    return TuningProfile(
        expected_rtt_ms=rtt,
        initial_rtt_guess_ms=int(min(max(0.75 * rtt, 100), 10000)),
        max_ack_delay_ms=round(0.5 * rtt),
        handshake_timeout_ms=max(10 * rtt, 20000),
        handshake_idle_timeout_ms=max(4 * rtt, 10000),
        min_remote_idle_timeout_ms=max(30000, 15 * rtt),
    )


def stock_tuning() -> TuningProfile:
    """The untuned baseline: stack defaults sized for short-RTT paths."""
    return TuningProfile(
        expected_rtt_ms=2000,
        initial_rtt_guess_ms=100,
        max_ack_delay_ms=25,
        handshake_timeout_ms=20000,
        handshake_idle_timeout_ms=10000,
        min_remote_idle_timeout_ms=30000,
    )


def initial_retransmit_deadline(t: TuningProfile) -> int:
    """Wait before the first Initial retransmission, in ms."""
    return 2 * t.initial_rtt_guess_ms


_BOOL_FIELDS = {"qpack_dynamic_table", "zero_rtt_enabled", "pmtud_enabled"}


def load_tuning_overrides(path: str | Path,
                          base: TuningProfile) -> TuningProfile:
    """Apply key=value overrides from a config file onto a profile.

    Keys mirror TuningProfile field names; '#' starts a comment.  Values
    parse as int, float (watermark_fraction), bool (true/false), or a
    cipher suite name.  Unknown keys raise InvalidProfile so typos fail
    loudly instead of silently keeping a default.
    """
    fields = {f for f in TuningProfile.__dataclass_fields__}
    updates: dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or key not in fields:
            raise InvalidProfile(f"{path}:{lineno}: unknown key {key!r}")
        if key in _BOOL_FIELDS:
            if value.lower() not in ("true", "false"):
                raise InvalidProfile(f"{path}:{lineno}: expected true/false")
            updates[key] = value.lower() == "true"
        elif key == "watermark_fraction":
            updates[key] = float(value)
        elif key == "cipher_suite":
            updates[key] = CipherSuite(value)
        else:
            updates[key] = int(value)
    return replace(base, **updates)
