"""Congestion and stall extraction from qlog traces.

Input is either a single JSON document ({"traces": [{"events": [...]}]})
or newline-delimited JSON with one event object per line, optionally
RS-prefixed and led by a qlog header line.  Events are {time, name,
data}; only four names matter here:

  recovery:metrics_updated   congestion_window / bytes_in_flight samples
  transport:packet_sent      activity
  transport:packet_received  activity
  recovery:packet_lost       annotation for plots

metrics_updated carries only the fields that changed, so values are
carried forward.  A stall is a gap of at least stall_threshold_ms
between consecutive activity events with bytes remaining in flight the
whole way through: silence while nothing is owed is idleness, not
blockage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

DEFAULT_STALL_THRESHOLD_MS = 1000.0

_ACTIVITY = {"packet_sent", "packet_received"}
_KNOWN = {"metrics_updated", "packet_sent", "packet_received", "packet_lost"}


class UnparseableTrace(ValueError):
    pass


class UnsupportedSchema(ValueError):
    pass


@dataclass(frozen=True)
class CwndSample:
    t_ms: float
    cwnd: int
    bytes_in_flight: int


@dataclass(frozen=True)
class PacketEvent:
    t_ms: float
    kind: str


@dataclass(frozen=True)
class Stall:
    start_ms: float
    end_ms: float

    @property
    def duration_ms(self) -> float:
        return self.end_ms - self.start_ms


@dataclass(frozen=True)
class CongestionSeries:
    samples: tuple[CwndSample, ...]
    events: tuple[PacketEvent, ...]
    stalls: tuple[Stall, ...]

    @property
    def total_stall_ms(self) -> float:
        return sum(s.duration_ms for s in self.stalls)


def _iter_raw_events(text: str) -> list[dict[str, Any]]:
    stripped = text.strip()
    if not stripped:
        raise UnparseableTrace("empty trace")

    doc = None
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        pass  # not a single document; try the line-delimited form below
    if doc is not None:
        if isinstance(doc, dict) and "traces" not in doc and "time" in doc:
            return [doc]  # a one-line event stream
        if not isinstance(doc, dict) or "traces" not in doc:
            raise UnsupportedSchema("expected a top-level 'traces' array")
        traces = doc["traces"]
        if not isinstance(traces, list):
            raise UnsupportedSchema("'traces' is not an array")
        events: list[dict[str, Any]] = []
        for trace in traces:
            if not isinstance(trace, dict) or \
                    not isinstance(trace.get("events"), list):
                raise UnsupportedSchema("trace without an 'events' array")
            events.extend(e for e in trace["events"] if isinstance(e, dict))
        return events

    # Newline-delimited: a header line plus one event object per line.
    events = []
    for lineno, raw in enumerate(stripped.splitlines(), 1):
        line = raw.lstrip("\x1e").strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UnparseableTrace(f"line {lineno}: invalid JSON") from exc
        if not isinstance(obj, dict):
            raise UnparseableTrace(f"line {lineno}: event is not an object")
        if "qlog_version" in obj and "time" not in obj:
            continue  # stream header
        events.append(obj)
    return events


def _event_kind(name: str) -> str:
    return name.rsplit(":", 1)[-1]


def analyze_qlog(text: str | bytes,
                 stall_threshold_ms: float = DEFAULT_STALL_THRESHOLD_MS
                 ) -> CongestionSeries:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise UnparseableTrace("trace is not UTF-8 text") from exc

    raw = _iter_raw_events(text)

    samples: list[CwndSample] = []
    events: list[PacketEvent] = []
    cwnd = 0
    in_flight = 0
    saw_known = False
    for obj in raw:
        name = obj.get("name")
        t = obj.get("time")
        if not isinstance(name, str) or not isinstance(t, (int, float)):
            continue
        kind = _event_kind(name)
        if kind not in _KNOWN:
            continue
        saw_known = True
        if kind == "metrics_updated":
            data = obj.get("data") or {}
            if not isinstance(data, dict):
                continue
            cwnd = int(data.get("congestion_window", data.get("cwnd", cwnd)))
            in_flight = int(data.get("bytes_in_flight", in_flight))
            samples.append(CwndSample(float(t), cwnd, in_flight))
        else:
            events.append(PacketEvent(float(t), kind))

    if not saw_known:
        raise UnsupportedSchema(
            "no recovery/transport events recognized in trace")

    samples.sort(key=lambda s: s.t_ms)
    events.sort(key=lambda e: e.t_ms)
    stalls = _find_stalls(samples, events, stall_threshold_ms)
    return CongestionSeries(samples=tuple(samples), events=tuple(events),
                            stalls=tuple(stalls))


def _in_flight_positive_throughout(samples: list[CwndSample],
                                   start: float, end: float) -> bool:
    value = 0
    inside_ok = True
    for s in samples:
        if s.t_ms <= start:
            value = s.bytes_in_flight
        elif s.t_ms < end:
            if s.bytes_in_flight <= 0:
                inside_ok = False
                break
        else:
            break
    return value > 0 and inside_ok


def _find_stalls(samples: list[CwndSample], events: list[PacketEvent],
                 threshold_ms: float) -> list[Stall]:
    activity = [e.t_ms for e in events if e.kind in _ACTIVITY]
    stalls: list[Stall] = []
    for prev, nxt in zip(activity, activity[1:]):
        if nxt - prev >= threshold_ms and \
                _in_flight_positive_throughout(samples, prev, nxt):
            stalls.append(Stall(prev, nxt))
    return stalls


def series_to_csv(series: CongestionSeries) -> str:
    lines = ["t_ms,cwnd,bytes_in_flight"]
    lines += [f"{s.t_ms:.3f},{s.cwnd},{s.bytes_in_flight}" for s in series.samples]
    return "\n".join(lines) + "\n"


def stalls_to_csv(series: CongestionSeries) -> str:
    lines = ["start_ms,end_ms,duration_ms"]
    lines += [f"{s.start_ms:.3f},{s.end_ms:.3f},{s.duration_ms:.3f}"
              for s in series.stalls]
    return "\n".join(lines) + "\n"
