"""Connection-lifecycle event log backing the timing metrics.

Records named moments (connection start, first Initial sent, first
application data sent, request completions, close) with monotonic
millisecond stamps.  Time-to-first-data-frame and execution time are
derived by subtraction, the same interval a packet capture at the
sender would show, but robust to payload encryption.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

EV_CONN_START = "conn_start"
EV_FIRST_INITIAL_SENT = "first_initial_sent"
EV_HANDSHAKE_DONE = "handshake_done"
EV_FIRST_APP_DATA_SENT = "first_app_data_sent"
EV_REQUEST_DONE = "request_done"
EV_CONN_CLOSED = "conn_closed"

# Events that may appear at most once per connection.
_ONCE = {EV_CONN_START, EV_FIRST_INITIAL_SENT, EV_HANDSHAKE_DONE,
         EV_FIRST_APP_DATA_SENT, EV_CONN_CLOSED}


class InvariantViolation(ValueError):
    pass


@dataclass(frozen=True)
class EventRecord:
    event: str
    t_ms: float
    seq: int | None = None

    @property
    def label(self) -> str:
        if self.seq is None:
            return self.event
        return f"{self.event}({self.seq})"


@dataclass
class EndpointEventLog:
    records: list[EventRecord] = field(default_factory=list)

    def record(self, event: str, t_ms: float, seq: int | None = None) -> None:
        if event in _ONCE and self.first(event) is not None:
            return
        self.records.append(EventRecord(event=event, t_ms=t_ms, seq=seq))

    def first(self, event: str) -> float | None:
        for r in self.records:
            if r.event == event:
                return r.t_ms
        return None

    def last(self, event: str) -> float | None:
        t = None
        for r in self.records:
            if r.event == event:
                t = r.t_ms
        return t

    def ttfdf_ms(self) -> float | None:
        """First Initial to first application data, the capture interval."""
        start = self.first(EV_FIRST_INITIAL_SENT)
        data = self.first(EV_FIRST_APP_DATA_SENT)
        if start is None or data is None:
            return None
        return data - start


def event_log_export(log: EndpointEventLog) -> str:
    """CSV rows "event,t_ms" in recorded order."""
    prev = None
    for r in log.records:
        if prev is not None and r.t_ms < prev:
            raise InvariantViolation("event log is not monotonic")
        prev = r.t_ms
    out = io.StringIO()
    out.write("event,t_ms\n")
    for r in log.records:
        out.write(f"{r.label},{r.t_ms:.3f}\n")
    return out.getvalue()
