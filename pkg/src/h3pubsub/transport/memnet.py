"""In-memory datagram link shaped by an impairment engine.

Joins one client endpoint to one server endpoint without sockets.
Every datagram runs through the same delay/loss/rate pipeline the UDP
proxy uses, and deliveries are scheduled on the event loop, so a run
against the virtual clock plays out the full network timeline in one
process without waiting for it.
"""

from __future__ import annotations

import asyncio
from collections.abc import Callable

from ..netlab.impair import (
    Deliver,
    Direction,
    ImpairmentEngine,
    ImpairmentSpec,
)

Receiver = Callable[[bytes], None]


class MemLink:
    """Bidirectional impaired pipe between two in-process endpoints."""

    def __init__(self, spec: ImpairmentSpec,
                 loop: asyncio.AbstractEventLoop | None = None,
                 keep_timeline: bool = True) -> None:
        self._loop = loop or asyncio.get_event_loop()
        self.engine = ImpairmentEngine(spec, keep_timeline=keep_timeline)
        self._receivers: dict[Direction, Receiver | None] = {
            Direction.UP: None, Direction.DOWN: None}
        self._closed = False

    def set_receiver(self, direction: Direction, receiver: Receiver) -> None:
        self._receivers[direction] = receiver

    def send(self, direction: Direction, data: bytes) -> None:
        if self._closed:
            return
        now_ms = self._loop.time() * 1000.0
        decision = self.engine.process(direction, len(data), now_ms)
        if isinstance(decision, Deliver):
            self._loop.call_at(decision.at_ms / 1000.0,
                               self._deliver, direction, data)

    def _deliver(self, direction: Direction, data: bytes) -> None:
        if self._closed:
            return
        receiver = self._receivers[direction]
        if receiver is not None:
            receiver(data)

    def close(self) -> None:
        # Pending call_at deliveries hit the _closed gate instead of
        # being tracked and cancelled one by one.
        self._closed = True

    # Handy bound senders for wiring up endpoints.

    def client_sender(self) -> Receiver:
        return lambda data: self.send(Direction.UP, data)

    def server_sender(self) -> Receiver:
        return lambda data: self.send(Direction.DOWN, data)
