"""Benchmark report emission: delimited tables plus rendered figures.

One call writes everything into a single directory: per-iteration and
summary CSVs, failure and resource tables, gnuplot-ready whisker columns
per experiment class, SVG renderings of the same whiskers, a congestion
timeline when a qlog trace is present, and a source footprint table.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from collections.abc import Sequence
from pathlib import Path

from matplotlib.figure import Figure

from .experiments import Mode
from .qlog_analysis import (CongestionSeries, UnparseableTrace,
                            UnsupportedSchema, analyze_qlog)
from .runner import ExperimentResult
from .stats import InsufficientData, SummaryStats, summarize

ITERATION_COLUMNS = ("experiment_id", "mode", "iteration", "exec_time_ms",
                     "ttfdf_ms", "bytes_up", "bytes_down", "datagrams_up",
                     "datagrams_down", "max_streams_adverts")
SUMMARY_METRICS = ("exec_time_ms", "ttfdf_ms", "bytes_up", "bytes_down",
                   "datagrams_up", "datagrams_down", "max_streams_adverts")
SUMMARY_COLUMNS = ("experiment_id", "metric", "mode", "whisker_low", "q1",
                   "median", "q3", "whisker_high", "mean", "outliers")
RESOURCE_COLUMNS = ("experiment_id", "mode", "iteration", "cpu_user_s",
                    "max_rss_kib")
RESOURCE_NOTE = ("# best-effort OS counters (process user CPU, peak RSS); "
                 "not comparable across machines or profiler output")

# x-axis per experiment class, read off the spec that produced the rows.
_CLASS_AXES = {
    "load": ("message count", lambda s: s.message_count),
    "rtt": ("round-trip time (ms)", lambda s: s.rtt_ms),
    "size": ("message size (B)", lambda s: s.message_size),
    "loss": ("loss rate (%)", lambda s: s.loss_pct),
}
_FIGURE_METRIC = "exec_time_ms"
_MODE_COLORS = {Mode.H3: "#1f77b4", Mode.MQ_FF: "#ff7f0e",
                Mode.MQ_AD: "#2ca02c"}


class IoFailure(OSError):
    """A report file could not be created or written."""


def _fmt(value: float) -> str:
    text = f"{float(value):.3f}".rstrip("0").rstrip(".")
    return text if text else "0"


def _write(path: Path, text: str) -> Path:
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def emit_report(results: Sequence[ExperimentResult], out_dir: str | Path,
                source_root: str | Path | None = None) -> list[Path]:
    """Write the full report for a batch of experiment results.

    Returns the paths written.  ``source_root`` overrides the directory
    measured by the footprint table (defaults to this package).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc

    written = [
        _write(out / "iterations.csv", _iterations_csv(results)),
        _write(out / "summary.csv", _summary_csv(results)),
        _write(out / "failures.csv", _failures_csv(results)),
        _write(out / "resources.csv", _resources_csv(results)),
        _write(out / "footprint.csv", _footprint_csv(source_root)),
    ]
    written += _emit_class_figures(results, out)
    written += _emit_congestion(results, out)
    return written


def _iterations_csv(results: Sequence[ExperimentResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(ITERATION_COLUMNS)
    for res in results:
        for s in res.samples:
            w.writerow([res.spec.experiment_id, res.spec.mode.value,
                        s.iteration, _fmt(s.exec_time_ms), _fmt(s.ttfdf_ms),
                        s.bytes_up, s.bytes_down, s.datagrams_up,
                        s.datagrams_down, s.max_streams_adverts])
    return buf.getvalue()


def _summary_csv(results: Sequence[ExperimentResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(SUMMARY_COLUMNS)
    for res in results:
        for metric in SUMMARY_METRICS:
            head = [res.spec.experiment_id, metric, res.spec.mode.value]
            try:
                st = summarize(res.samples, key=metric)
            except InsufficientData:
                w.writerow(head + [""] * 7)
                continue
            w.writerow(head + [_fmt(st.whisker_low), _fmt(st.q1),
                               _fmt(st.median), _fmt(st.q3),
                               _fmt(st.whisker_high), _fmt(st.mean),
                               ";".join(_fmt(o) for o in st.outliers)])
    return buf.getvalue()


def _failures_csv(results: Sequence[ExperimentResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("experiment_id", "mode", "iteration", "error"))
    for res in results:
        for f in res.failures:
            w.writerow((f.experiment_id, f.mode, f.iteration, f.error))
    return buf.getvalue()


def _resources_csv(results: Sequence[ExperimentResult]) -> str:
    buf = io.StringIO()
    buf.write(RESOURCE_NOTE + "\n")
    w = csv.writer(buf)
    w.writerow(RESOURCE_COLUMNS)
    for res in results:
        for r in res.resources:
            w.writerow((r.experiment_id, r.mode, r.iteration,
                        _fmt(r.cpu_user_s), r.max_rss_kib))
    return buf.getvalue()


def _footprint_csv(source_root: str | Path | None) -> str:
    root = Path(source_root) if source_root is not None else \
        Path(__file__).resolve().parents[1]
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(("file", "size_bytes"))
    total = 0
    try:
        for path in sorted(root.rglob("*.py")):
            if "__pycache__" in path.parts:
                continue
            size = path.stat().st_size
            total += size
            w.writerow((str(path.relative_to(root.parent)), size))
    except OSError as exc:
        raise IoFailure(f"cannot measure {root}: {exc}") from exc
    w.writerow(("total", total))
    return buf.getvalue()


# --- figures ---

def _grouped(results: Sequence[ExperimentResult]
             ) -> dict[str, dict[float, dict[Mode, ExperimentResult]]]:
    groups: dict[str, dict[float, dict[Mode, ExperimentResult]]] = \
        defaultdict(lambda: defaultdict(dict))
    for res in results:
        cls = res.spec.experiment_id.split("-", 1)[0]
        if cls not in _CLASS_AXES:
            continue
        x = float(_CLASS_AXES[cls][1](res.spec))
        groups[cls][x][res.spec.mode] = res
    return groups


def _emit_class_figures(results: Sequence[ExperimentResult],
                        out: Path) -> list[Path]:
    written: list[Path] = []
    for cls, by_x in sorted(_grouped(results).items()):
        rows: list[tuple[float, Mode, SummaryStats]] = []
        for x in sorted(by_x):
            for mode in Mode:
                res = by_x[x].get(mode)
                if res is None:
                    continue
                try:
                    st = summarize(res.samples, key=_FIGURE_METRIC)
                except InsufficientData:
                    continue
                rows.append((x, mode, st))
        if not rows:
            continue
        written.append(_write(out / f"{cls}-exec-time.dat",
                              _gnuplot_dat(cls, rows)))
        written.append(_render_whiskers(cls, rows,
                                        out / f"{cls}-exec-time.svg"))
    return written


def _gnuplot_dat(cls: str,
                 rows: list[tuple[float, Mode, SummaryStats]]) -> str:
    label = _CLASS_AXES[cls][0]
    lines = [f"# exec time whiskers by {label}",
             "# columns: x whisker_low q1 median q3 whisker_high mean",
             "# one index block per mode, in listed order"]
    for mode in Mode:
        block = [(x, st) for x, m, st in rows if m is mode]
        if not block:
            continue
        lines.append(f"# mode: {mode.value}")
        for x, st in block:
            lines.append(" ".join((
                _fmt(x), _fmt(st.whisker_low), _fmt(st.q1), _fmt(st.median),
                _fmt(st.q3), _fmt(st.whisker_high), _fmt(st.mean))))
        lines.append("")
        lines.append("")
    while lines and not lines[-1]:
        lines.pop()
    return "\n".join(lines) + "\n"


def _render_whiskers(cls: str, rows: list[tuple[float, Mode, SummaryStats]],
                     path: Path) -> Path:
    label = _CLASS_AXES[cls][0]
    xs = sorted({x for x, _, _ in rows})
    modes = [m for m in Mode if any(r[1] is m for r in rows)]
    group = len(modes) + 1
    fig = Figure(figsize=(7, 4), layout="tight")
    ax = fig.subplots()
    for j, mode in enumerate(modes):
        stats = []
        positions = []
        for i, x in enumerate(xs):
            st = next((s for xx, m, s in rows if xx == x and m is mode), None)
            if st is None:
                continue
            stats.append({"med": st.median, "q1": st.q1, "q3": st.q3,
                          "whislo": st.whisker_low,
                          "whishi": st.whisker_high,
                          "mean": st.mean, "fliers": list(st.outliers)})
            positions.append(i * group + j)
        if not stats:
            continue
        color = _MODE_COLORS[mode]
        ax.bxp(stats, positions=positions, widths=0.7, showmeans=True,
               meanprops={"marker": "x", "markeredgecolor": color},
               boxprops={"color": color}, whiskerprops={"color": color},
               capprops={"color": color}, medianprops={"color": color},
               flierprops={"marker": "o", "markeredgecolor": color,
                           "markersize": 4})
        ax.plot([], [], color=color, label=mode.value)
    ax.set_xticks([i * group + (len(modes) - 1) / 2 for i in range(len(xs))])
    ax.set_xticklabels([_fmt(x) for x in xs])
    ax.set_xlabel(label)
    ax.set_ylabel("exec time (ms)")
    ax.legend(loc="upper left", fontsize=8)
    try:
        fig.savefig(path, format="svg")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def _emit_congestion(results: Sequence[ExperimentResult],
                     out: Path) -> list[Path]:
    trace = next((r.qlog_trace for r in reversed(list(results))
                  if r.qlog_trace), "")
    if not trace:
        return []
    try:
        series = analyze_qlog(trace)
    except (UnparseableTrace, UnsupportedSchema):
        return []
    return [_write(out / "congestion.dat", _congestion_dat(series)),
            _render_congestion(series, out / "congestion.svg")]


def _congestion_dat(series: CongestionSeries) -> str:
    lines = ["# columns: t_ms cwnd bytes_in_flight"]
    lines += [f"# stall: {_fmt(s.start_ms)} .. {_fmt(s.end_ms)}"
              for s in series.stalls]
    lines += [f"{_fmt(s.t_ms)} {s.cwnd} {s.bytes_in_flight}"
              for s in series.samples]
    return "\n".join(lines) + "\n"


def _render_congestion(series: CongestionSeries, path: Path) -> Path:
    fig = Figure(figsize=(7, 4), layout="tight")
    ax = fig.subplots()
    if series.samples:
        ts = [s.t_ms for s in series.samples]
        ax.step(ts, [s.cwnd for s in series.samples], where="post",
                label="cwnd")
        ax.step(ts, [s.bytes_in_flight for s in series.samples],
                where="post", label="bytes in flight")
    lost = [e.t_ms for e in series.events if e.kind == "packet_lost"]
    if lost:
        ax.plot(lost, [0] * len(lost), linestyle="none", marker="v",
                color="#d62728", label="loss")
    for i, stall in enumerate(series.stalls):
        ax.axvspan(stall.start_ms, stall.end_ms, color="#d62728",
                   alpha=0.15, label="stall" if i == 0 else None)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("bytes")
    ax.legend(loc="upper left", fontsize=8)
    try:
        fig.savefig(path, format="svg")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
