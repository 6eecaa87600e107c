"""Pure impairment engine: per-direction delay, loss, and rate shaping.

Time is passed in, never read from a clock, so the same engine drives
the real UDP proxy and the in-memory network under a virtual clock, and
a replay with the same seed and arrival sequence reproduces every drop
decision exactly.

Pipeline per datagram: MTU check, then uniform loss, then the rate
queue, then fixed delay with uniform jitter.  Loss precedes the rate
queue to mirror egress drops on a sending interface.  Delivery keeps
FIFO order per direction: jitter can stretch spacing but never reorder.
"""

from __future__ import annotations

import enum
import io
import random
from dataclasses import dataclass, replace


class Direction(enum.Enum):
    UP = "up"      # client/publisher toward broker
    DOWN = "down"  # broker toward client/publisher

    @property
    def index(self) -> int:
        return 0 if self is Direction.UP else 1


class DropReason(enum.Enum):
    LOSS = "loss"
    MTU = "mtu"


@dataclass(frozen=True)
class Deliver:
    at_ms: float


@dataclass(frozen=True)
class Drop:
    reason: DropReason


Decision = Deliver | Drop


@dataclass(frozen=True)
class ImpairmentSpec:
    """Link shaping parameters.

    delay_ms is the one-way delay applied to each direction, i.e. half
    of the target RTT.  Rates of None mean unthrottled.
    """

    delay_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_pct: float = 0.0
    rate_up_kbps: float | None = None
    rate_down_kbps: float | None = None
    seed: int = 0
    mtu: int = 1500

    def __post_init__(self) -> None:
        if self.delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delay and jitter must be >= 0")
        if not 0.0 <= self.loss_pct <= 100.0:
            raise ValueError("loss_pct must be within [0, 100]")
        for rate in (self.rate_up_kbps, self.rate_down_kbps):
            if rate is not None and rate <= 0:
                raise ValueError("rates must be positive when set")
        if self.mtu < 64:
            raise ValueError("mtu too small")

    def with_seed(self, seed: int) -> ImpairmentSpec:
        return replace(self, seed=seed)

    def rate_for(self, direction: Direction) -> float | None:
        return self.rate_up_kbps if direction is Direction.UP else self.rate_down_kbps


def nbiot2_impairments(seed: int = 0, loss_pct: float = 0.0) -> ImpairmentSpec:
    """Narrowband-cellular preset: 2 s RTT split per direction,
    asymmetric kilobit rates, 1500-byte MTU."""
    return ImpairmentSpec(delay_ms=1000.0, loss_pct=loss_pct,
                          rate_up_kbps=159.0, rate_down_kbps=127.0,
                          seed=seed, mtu=1500)


def serialization_delay_ms(size: int, rate_kbps: float) -> float:
    """Time to clock size bytes onto a rate_kbps link, in ms."""
    if rate_kbps <= 0:
        raise ValueError("rate must be positive")
    return size * 8.0 / rate_kbps


@dataclass(frozen=True)
class TimelineEntry:
    """One datagram's fate, for post-run timeline reconstruction."""

    offered_at_ms: float
    direction: Direction
    size: int
    delivered_at_ms: float | None  # None when dropped
    drop_reason: DropReason | None


@dataclass
class LinkCounters:
    offered: int = 0
    forwarded: int = 0
    dropped_loss: int = 0
    dropped_mtu: int = 0
    bytes_forwarded: int = 0
    first_ms: float | None = None
    last_ms: float | None = None

    def conserved(self) -> bool:
        return self.offered == self.forwarded + self.dropped_loss + self.dropped_mtu


class _TokenBucket:
    """Byte bucket refilled at the link rate, burst-capped.

    Starts empty: a fresh link still has to clock the first datagram
    out bit by bit.  While a datagram waits for tokens the bucket's
    timeline advances to its ready time, which is what serializes
    back-to-back arrivals FIFO.
    """

    def __init__(self, rate_kbps: float, burst_bytes: int) -> None:
        self._rate_bpms = rate_kbps / 8.0  # bytes per ms
        self._burst = float(burst_bytes)
        self._tokens = 0.0
        self._updated_ms = 0.0

    def ready_at(self, size: int, now_ms: float) -> float:
        start = max(now_ms, self._updated_ms)
        tokens = min(self._burst,
                     self._tokens + (start - self._updated_ms) * self._rate_bpms)
        if tokens >= size:
            self._tokens = tokens - size
            self._updated_ms = start
            return start
        ready = start + (size - tokens) / self._rate_bpms
        self._tokens = 0.0
        self._updated_ms = ready
        return ready


class _Pipeline:
    def __init__(self, spec: ImpairmentSpec, direction: Direction) -> None:
        self._spec = spec
        rate = spec.rate_for(direction)
        self._bucket = (_TokenBucket(rate, 2 * spec.mtu)
                        if rate is not None else None)
        self._rng = random.Random(spec.seed * 2 + direction.index)
        self._last_delivery_ms = 0.0
        self.counters = LinkCounters()

    def process(self, size: int, now_ms: float) -> Decision:
        c = self.counters
        c.offered += 1
        if c.first_ms is None:
            c.first_ms = now_ms
        c.last_ms = now_ms

        if size > self._spec.mtu:
            c.dropped_mtu += 1
            return Drop(DropReason.MTU)
        if self._spec.loss_pct and \
                self._rng.random() < self._spec.loss_pct / 100.0:
            c.dropped_loss += 1
            return Drop(DropReason.LOSS)

        at = self._bucket.ready_at(size, now_ms) if self._bucket else now_ms
        at += self._spec.delay_ms
        if self._spec.jitter_ms:
            at += self._rng.uniform(-self._spec.jitter_ms, self._spec.jitter_ms)
        # FIFO clamp: jitter never reorders a direction's queue.
        at = max(at, self._last_delivery_ms, now_ms)
        self._last_delivery_ms = at
        c.forwarded += 1
        c.bytes_forwarded += size
        return Deliver(at_ms=at)


class ImpairmentEngine:
    """Both directions of one impaired link, with counters and timeline."""

    def __init__(self, spec: ImpairmentSpec, keep_timeline: bool = True) -> None:
        self.spec = spec
        self._pipes = {d: _Pipeline(spec, d) for d in Direction}
        self.timeline: list[TimelineEntry] | None = [] if keep_timeline else None

    def process(self, direction: Direction, size: int, now_ms: float) -> Decision:
        decision = self._pipes[direction].process(size, now_ms)
        if self.timeline is not None:
            delivered = decision.at_ms if isinstance(decision, Deliver) else None
            reason = decision.reason if isinstance(decision, Drop) else None
            self.timeline.append(TimelineEntry(now_ms, direction, size,
                                               delivered, reason))
        return decision

    def counters(self, direction: Direction) -> LinkCounters:
        return self._pipes[direction].counters


COUNTER_COLUMNS = ("direction", "offered", "forwarded", "dropped_loss",
                   "dropped_mtu", "bytes_forwarded", "first_ms", "last_ms")


def counters_export(engine: ImpairmentEngine) -> str:
    """CSV with one row per direction."""
    out = io.StringIO()
    out.write(",".join(COUNTER_COLUMNS) + "\n")
    for direction in Direction:
        c = engine.counters(direction)
        fmt = lambda v: "" if v is None else f"{v:.3f}"
        out.write(f"{direction.value},{c.offered},{c.forwarded},"
                  f"{c.dropped_loss},{c.dropped_mtu},{c.bytes_forwarded},"
                  f"{fmt(c.first_ms)},{fmt(c.last_ms)}\n")
    return out.getvalue()
