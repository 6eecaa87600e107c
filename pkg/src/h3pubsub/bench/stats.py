"""Whisker statistics for benchmark samples.

Quartiles use the exclusive method: the overall median splits the sorted
data into halves (itself excluded when n is odd) and q1/q3 are the
medians of those halves.  Outliers are points beyond the Tukey fences at
1.5 IQR; whiskers are the min and max of what remains.
"""

from __future__ import annotations

import statistics
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from operator import attrgetter
from typing import Any


class InsufficientData(ValueError):
    """Fewer than four samples: quartiles would be meaningless."""


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: tuple[float, ...]

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1


def summarize(samples: Iterable[Any],
              key: str | Callable[[Any], float] | None = None) -> SummaryStats:
    """Whisker summary of a metric across samples.

    ``key`` selects the metric when samples are records: an attribute
    name or a callable.  Omit it when samples are already numbers.
    """
    if key is None:
        values = [float(v) for v in samples]
    else:
        get = attrgetter(key) if isinstance(key, str) else key
        values = [float(get(s)) for s in samples]
    if len(values) < 4:
        raise InsufficientData(f"need >= 4 samples, got {len(values)}")

    s = sorted(values)
    n = len(s)
    med = statistics.median(s)
    q1 = statistics.median(s[: n // 2])
    q3 = statistics.median(s[(n + 1) // 2:])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    outliers = [v for v in s if v < lo_fence or v > hi_fence]
    kept = [v for v in s if lo_fence <= v <= hi_fence]
    return SummaryStats(
        mean=statistics.fmean(s),
        median=med,
        q1=q1,
        q3=q3,
        whisker_low=kept[0],
        whisker_high=kept[-1],
        outliers=tuple(outliers),
    )


def summarize_by(samples: Sequence[Any], *metrics: str) -> dict[str, SummaryStats]:
    """summarize() over several record attributes at once."""
    return {m: summarize(samples, key=m) for m in metrics}
