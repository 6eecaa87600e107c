"""High-watermark stream-limit advertisement policy.

A QUIC peer may only open streams whose IDs sit below the cumulative
limit we last advertised.  Advertising a fresh limit on every stream
close keeps availability perfectly level but costs one control frame per
request.  This policy batches instead: wait until a fixed fraction of
the originally negotiated window has closed, then grant back exactly the
number of streams that closed since the previous advertisement.

Pure counter state, transport-independent; the transport calls
``on_stream_opened`` / ``on_stream_closed`` and sends a MAX_STREAMS
frame whenever the latter hands back a new limit.

Guarantees:
  * advertised_limit never decreases and successive grants strictly
    increase,
  * advertised_limit - closed_total equals the negotiated window at
    every advertisement, so a peer that respects limits always regains
    at least ceil(fraction * M) credits in bounded time,
  * over K closes exactly floor(K / ceil(fraction * M)) advertisements
    are emitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def _watermark(negotiated_max: int, fraction: float) -> int:
    return math.ceil(fraction * negotiated_max)


@dataclass
class StreamBudget:
    """Advertisement state for one direction of peer-initiated streams.

    negotiated_max: window size M granted in the transport handshake.
    watermark_fraction: portion of M that must close before the next
    advertisement; 1/M degenerates to advertising on every close.
    """

    negotiated_max: int
    watermark_fraction: float = 0.5
    advertised_limit: int = field(init=False)
    closed_total: int = field(init=False, default=0)
    closed_since_advert: int = field(init=False, default=0)
    opened_total: int = field(init=False, default=0)
    adverts_sent: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if self.negotiated_max < 1:
            raise ValueError("negotiated_max must be >= 1")
        if not 0.0 < self.watermark_fraction <= 1.0:
            raise ValueError("watermark_fraction must be in (0, 1]")
        self.advertised_limit = self.negotiated_max

    @property
    def watermark(self) -> int:
        return _watermark(self.negotiated_max, self.watermark_fraction)

    def on_stream_opened(self) -> None:
        self.opened_total += 1

    def on_stream_closed(self) -> int | None:
        """Record a peer-initiated stream reaching fully-closed.

        Returns the new cumulative limit to advertise when the watermark
        is hit, else None.
        """
        self.closed_total += 1
        self.closed_since_advert += 1
        if self.closed_since_advert >= self.watermark:
            self.advertised_limit += self.closed_since_advert
            self.closed_since_advert = 0
            self.adverts_sent += 1
            return self.advertised_limit
        return None

    def peer_available_streams(self) -> int:
        return self.advertised_limit - self.opened_total


def frames_saved(closed_total: int, negotiated_max: int,
                 fraction: float = 0.5) -> int:
    """Control frames avoided versus advertising on every close."""
    if negotiated_max < 1:
        raise ValueError("negotiated_max must be >= 1")
    return closed_total - closed_total // _watermark(negotiated_max, fraction)
