"""Experiment matrix: workload classes crossed with protocol modes.

Four classes cover the tuning variables: message load, round-trip
time, message size, and loss rate.  Every class other than the RTT
sweep runs on the narrowband cellular preset (2 s RTT, 159/127 kbit/s
up/down).  Each spec carries its own seed base; iteration k of a spec
always runs with seed_base + k, which is what makes reruns and
order-shuffling harmless.
"""

from __future__ import annotations

import configparser
import enum
from dataclasses import dataclass
from pathlib import Path

from ..netlab.impair import ImpairmentSpec
from ..tuning import NetworkProfile, TuningProfile, derive_tuning

NBIOT_RTT_MS = 2000
NBIOT_UP_KBPS = 159.0
NBIOT_DOWN_KBPS = 127.0

LOAD_COUNTS = (1, 10, 25, 50, 100)
RTT_SWEEP_MS = (0, 500, 1000, 1500, 2000)
SIZE_SWEEP = (32, 2048, 4096)
LOSS_SWEEP_PCT = (0.0, 2.0, 4.0, 6.0)

DEFAULT_INTERVAL_MS = 100
DEFAULT_ITERATIONS = 20
DEFAULT_SEED_BASE = 20_240_001


class Mode(enum.Enum):
    H3 = "h3"
    MQ_FF = "mq-ff"
    MQ_AD = "mq-ad"


def parse_modes(text: str) -> tuple[Mode, ...]:
    out = []
    for part in text.split(","):
        part = part.strip().lower()
        if not part:
            continue
        try:
            out.append(Mode(part))
        except ValueError:
            raise ValueError(f"unknown mode {part!r}; expected "
                             f"{', '.join(m.value for m in Mode)}") from None
    if not out:
        raise ValueError("no modes given")
    return tuple(out)


@dataclass(frozen=True)
class ExperimentSpec:
    experiment_id: str
    mode: Mode
    message_count: int
    message_size: int
    interval_ms: int = DEFAULT_INTERVAL_MS
    rtt_ms: int = NBIOT_RTT_MS
    loss_pct: float = 0.0
    rate_up_kbps: float = NBIOT_UP_KBPS
    rate_down_kbps: float = NBIOT_DOWN_KBPS
    iterations: int = DEFAULT_ITERATIONS
    seed_base: int = DEFAULT_SEED_BASE

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.interval_ms < 0:
            raise ValueError("interval must be nonnegative")
        if self.message_count < 1:
            raise ValueError("message_count must be at least 1")
        if self.message_size < 0:
            raise ValueError("message_size must be nonnegative")

    def iteration_seed(self, iteration: int) -> int:
        return self.seed_base + iteration

    def impairments(self, iteration: int) -> ImpairmentSpec:
        return ImpairmentSpec(
            delay_ms=self.rtt_ms / 2,
            loss_pct=self.loss_pct,
            rate_up_kbps=self.rate_up_kbps,
            rate_down_kbps=self.rate_down_kbps,
            seed=self.iteration_seed(iteration))

    def tuning(self) -> TuningProfile:
        profile = NetworkProfile(
            name=f"bench-rtt{self.rtt_ms}",
            downlink_rate_kbps=self.rate_down_kbps,
            uplink_rate_kbps=self.rate_up_kbps,
            rtt_ms=self.rtt_ms)
        return derive_tuning(profile)


@dataclass
class MatrixConfig:
    """Knobs the config file may override, by experiment class."""

    load_counts: tuple[int, ...] = LOAD_COUNTS
    load_size: int = 32
    rtt_values: tuple[int, ...] = RTT_SWEEP_MS
    rtt_count: int = 50
    rtt_size: int = 32
    size_values: tuple[int, ...] = SIZE_SWEEP
    size_count: int = 50
    loss_values: tuple[float, ...] = LOSS_SWEEP_PCT
    loss_count: int = 50
    loss_size: int = 2048
    interval_ms: int = DEFAULT_INTERVAL_MS
    iterations: int = DEFAULT_ITERATIONS
    seed_base: int = DEFAULT_SEED_BASE
    modes: tuple[Mode, ...] = tuple(Mode)
    classes: tuple[str, ...] = ("load", "rtt", "size", "loss")


def matrix(config: MatrixConfig | None = None) -> list[ExperimentSpec]:
    cfg = config or MatrixConfig()
    base = dict(interval_ms=cfg.interval_ms, iterations=cfg.iterations,
                seed_base=cfg.seed_base)
    specs: list[ExperimentSpec] = []

    def add(experiment_id: str, **kwargs) -> None:
        for mode in cfg.modes:
            specs.append(ExperimentSpec(experiment_id=experiment_id,
                                        mode=mode, **base, **kwargs))

    if "load" in cfg.classes:
        for count in cfg.load_counts:
            add(f"load-c{count}-s{cfg.load_size}",
                message_count=count, message_size=cfg.load_size)
    if "rtt" in cfg.classes:
        for rtt in cfg.rtt_values:
            add(f"rtt-{rtt}ms", message_count=cfg.rtt_count,
                message_size=cfg.rtt_size, rtt_ms=rtt)
    if "size" in cfg.classes:
        for size in cfg.size_values:
            add(f"size-{size}B", message_count=cfg.size_count,
                message_size=size)
    if "loss" in cfg.classes:
        for loss in cfg.loss_values:
            add(f"loss-{loss:g}pct", message_count=cfg.loss_count,
                message_size=cfg.loss_size, loss_pct=loss)
    return specs


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v.strip()) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in text.split(",") if v.strip())


def load_matrix_config(path: str | Path) -> MatrixConfig:
    """Read class-sectioned key=value overrides.

    Sections: [common], [load], [rtt], [size], [loss].  Unknown keys
    are an error so typos do not silently run the default matrix.
    """
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text, source=str(path))
    cfg = MatrixConfig()
    handlers = {
        ("common", "interval_ms"): lambda v: setattr(cfg, "interval_ms", int(v)),
        ("common", "iterations"): lambda v: setattr(cfg, "iterations", int(v)),
        ("common", "seed_base"): lambda v: setattr(cfg, "seed_base", int(v)),
        ("common", "modes"): lambda v: setattr(cfg, "modes", parse_modes(v)),
        ("common", "classes"): lambda v: setattr(
            cfg, "classes", tuple(c.strip() for c in v.split(",") if c.strip())),
        ("load", "counts"): lambda v: setattr(cfg, "load_counts", _ints(v)),
        ("load", "message_size"): lambda v: setattr(cfg, "load_size", int(v)),
        ("rtt", "values_ms"): lambda v: setattr(cfg, "rtt_values", _ints(v)),
        ("rtt", "message_count"): lambda v: setattr(cfg, "rtt_count", int(v)),
        ("rtt", "message_size"): lambda v: setattr(cfg, "rtt_size", int(v)),
        ("size", "values"): lambda v: setattr(cfg, "size_values", _ints(v)),
        ("size", "message_count"): lambda v: setattr(cfg, "size_count", int(v)),
        ("loss", "values_pct"): lambda v: setattr(cfg, "loss_values", _floats(v)),
        ("loss", "message_count"): lambda v: setattr(cfg, "loss_count", int(v)),
        ("loss", "message_size"): lambda v: setattr(cfg, "loss_size", int(v)),
    }
    for section in parser.sections():
        for key, value in parser.items(section):
            handler = handlers.get((section, key))
            if handler is None:
                raise ValueError(
                    f"unknown matrix config key [{section}] {key}")
            handler(value)
    unknown = set(cfg.classes) - {"load", "rtt", "size", "loss"}
    if unknown:
        raise ValueError(f"unknown experiment classes: {sorted(unknown)}")
    return cfg
