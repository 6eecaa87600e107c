"""UDP adapter for the impairment engine.

Fronts one upstream endpoint for any number of clients.  Each client
source address gets its own upstream-facing socket, NAT style, so
replies find their way back to the right client; all flows share one
engine, i.e. one emulated link with common token buckets and loss
stream.  Datagrams ride the engine's decisions: drops vanish,
deliveries are scheduled on the loop at the engine's computed time.

Flows are never expired; at desk scale that is fine, a long soak with
churning clients would want an idle sweep.
"""

from __future__ import annotations

import asyncio
import logging
from pathlib import Path

from .impair import Decision, Deliver, Direction, ImpairmentEngine, \
    ImpairmentSpec, counters_export

log = logging.getLogger(__name__)


class _Front(asyncio.DatagramProtocol):
    def __init__(self, proxy: UdpImpairmentProxy) -> None:
        self._proxy = proxy
        self.transport: asyncio.DatagramTransport | None = None

    def connection_made(self, transport) -> None:
        self.transport = transport

    def datagram_received(self, data: bytes, addr) -> None:
        self._proxy._on_up(data, addr)

    def error_received(self, exc) -> None:
        log.debug("front socket error: %s", exc)


class _Back(asyncio.DatagramProtocol):
    def __init__(self, proxy: UdpImpairmentProxy, flow: _Flow) -> None:
        self._proxy = proxy
        self._flow = flow
        self.transport: asyncio.DatagramTransport | None = None

    def connection_made(self, transport) -> None:
        self.transport = transport

    def datagram_received(self, data: bytes, addr) -> None:
        self._proxy._on_down(self._flow, data)

    def error_received(self, exc) -> None:
        log.debug("back socket error: %s", exc)


class _Flow:
    """One client's seat on the link: its address and upstream socket."""

    def __init__(self, client_addr: tuple[str, int]) -> None:
        self.client_addr = client_addr
        self.back: _Back | None = None
        self.outbox: list[bytes] = []  # held until the back socket exists

    def send_up(self, data: bytes) -> None:
        if self.back is None or self.back.transport is None:
            self.outbox.append(data)
        elif not self.back.transport.is_closing():
            self.back.transport.sendto(data)

    def attach(self, back: _Back) -> None:
        self.back = back
        pending, self.outbox = self.outbox, []
        for data in pending:
            self.send_up(data)


class UdpImpairmentProxy:
    """One impaired hop between clients and an upstream UDP endpoint."""

    def __init__(self, upstream: tuple[str, int], spec: ImpairmentSpec,
                 listen: tuple[str, int] = ("127.0.0.1", 0)) -> None:
        self._upstream = upstream
        self._listen = listen
        self.engine = ImpairmentEngine(spec)
        self._front: _Front | None = None
        self._flows: dict[tuple[str, int], _Flow] = {}
        self._loop: asyncio.AbstractEventLoop | None = None
        self._pending: set[asyncio.TimerHandle] = set()
        self._tasks: set[asyncio.Task] = set()

    @property
    def listen_addr(self) -> tuple[str, int]:
        return self._front.transport.get_extra_info("sockname")[:2]

    async def start(self) -> tuple[str, int]:
        self._loop = asyncio.get_running_loop()
        _, self._front = await self._loop.create_datagram_endpoint(
            lambda: _Front(self), local_addr=self._listen)
        return self.listen_addr

    def _flow_for(self, addr) -> _Flow:
        flow = self._flows.get(addr)
        if flow is None:
            flow = _Flow(addr)
            self._flows[addr] = flow
            task = self._loop.create_task(self._open_back(flow))
            self._tasks.add(task)
            task.add_done_callback(self._tasks.discard)
        return flow

    async def _open_back(self, flow: _Flow) -> None:
        try:
            _, back = await self._loop.create_datagram_endpoint(
                lambda: _Back(self, flow), remote_addr=self._upstream)
        except OSError as exc:
            log.warning("cannot reach upstream %s: %s", self._upstream, exc)
            del self._flows[flow.client_addr]
            return
        flow.attach(back)

    def _on_up(self, data: bytes, addr) -> None:
        flow = self._flow_for(addr)
        self._schedule(Direction.UP, data, lambda: flow.send_up(data))

    def _on_down(self, flow: _Flow, data: bytes) -> None:
        self._schedule(Direction.DOWN, data, lambda: self._send_down(flow, data))

    def _send_down(self, flow: _Flow, data: bytes) -> None:
        front = self._front
        if front and front.transport and not front.transport.is_closing():
            front.transport.sendto(data, flow.client_addr)

    def _schedule(self, direction: Direction, data: bytes, send) -> None:
        now_ms = self._loop.time() * 1000.0
        decision: Decision = self.engine.process(direction, len(data), now_ms)
        if isinstance(decision, Deliver):
            handle: asyncio.TimerHandle | None = None

            def fire() -> None:
                self._pending.discard(handle)
                send()

            handle = self._loop.call_at(decision.at_ms / 1000.0, fire)
            self._pending.add(handle)

    async def stop(self) -> None:
        for handle in self._pending:
            handle.cancel()
        self._pending.clear()
        for task in self._tasks:
            task.cancel()
        if self._front and self._front.transport:
            self._front.transport.close()
        for flow in self._flows.values():
            if flow.back and flow.back.transport:
                flow.back.transport.close()
        self._flows.clear()
        await asyncio.sleep(0)

    def export_counters(self, path: str | Path | None = None) -> str:
        text = counters_export(self.engine)
        if path is not None:
            Path(path).write_text(text)
        return text
