"""Frame-level occupancy -> fixed control intervals, and annual tiling of measured days."""
from __future__ import annotations

import calendar as _calendar
import csv
import math
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import Callable, Iterable, Sequence

import numpy as np

from .ingest import format_timestamp, parse_timestamp
from .samples import OccupancySample

DEFAULT_INTERVAL = 300.0
DAY = 86400.0

REDUCERS: dict[str, Callable[[Sequence[float]], float]] = {
    "max": lambda v: max(v),
    "mean": lambda v: float(np.mean(v)),
    "median": lambda v: float(np.median(v)),
    "last": lambda v: v[-1],
}


@dataclass(frozen=True)
class IntervalSample:
    k: int
    start: float
    n: float
    occupied: bool

    @property
    def start_iso(self) -> str:
        return format_timestamp(self.start)


def _interval(k: int, start: float, n: float) -> IntervalSample:
    return IntervalSample(k, start, n, n >= 1)


def aggregate(
    samples: Sequence[OccupancySample],
    interval: float = DEFAULT_INTERVAL,
    reducer: str | Callable[[Sequence[float]], float] = "max",
    start: float | None = None,
    end: float | None = None,
) -> list[IntervalSample]:
    """Bucket samples by ``floor(timestamp / interval)`` and reduce each bucket.

    The output covers ``[start, end)`` (defaults: the buckets of the first and
    last sample) with no gaps; empty buckets get ``n = 0``.
    """
    if interval <= 0:
        raise ValueError("interval must be positive")
    fn = REDUCERS[reducer] if isinstance(reducer, str) else reducer
    if not samples and (start is None or end is None):
        return []
    first = math.floor((start if start is not None else samples[0].timestamp) / interval)
    if end is not None:
        last = math.ceil(end / interval) - 1
    else:
        last = math.floor(samples[-1].timestamp / interval)
    buckets: dict[int, list[int]] = {}
    for s in samples:
        b = math.floor(s.timestamp / interval)
        if first <= b <= last:
            buckets.setdefault(b, []).append(s.count)
    out = []
    for k, b in enumerate(range(first, last + 1)):
        values = buckets.get(b)
        out.append(_interval(k, b * interval, fn(values) if values else 0))
    return out


def day_profiles(intervals: Sequence[IntervalSample], interval: float = DEFAULT_INTERVAL) -> list[list[float]]:
    """Split an interval series into whole-day count profiles (UTC days, missing slots = 0)."""
    slots = int(round(DAY / interval))
    days: dict[int, list[float]] = {}
    for iv in intervals:
        d = math.floor(iv.start / DAY)
        slot = int(round((iv.start - d * DAY) / interval))
        days.setdefault(d, [0] * slots)[slot] = iv.n
    return [days[d] for d in sorted(days)]


def calendar_year(year: int) -> list[date]:
    n = 366 if _calendar.isleap(year) else 365
    return [date.fromordinal(date(year, 1, 1).toordinal() + i) for i in range(n)]


def profile_index(day: date, n_profiles: int) -> int:
    """Round-robin profile choice; day 366 of a leap year repeats day 365's profile."""
    doy = min(day.timetuple().tm_yday, 365) - 1
    return doy % n_profiles


def tile_annual_profile(
    profiles: Sequence[Sequence[float]],
    days: Iterable[date] | int,
    interval: float = DEFAULT_INTERVAL,
) -> list[IntervalSample]:
    """Year-long interval series built by reusing measured day profiles round-robin.

    ``days`` is either a year or an explicit sequence of calendar dates.
    """
    if not profiles:
        raise ValueError("need at least one day profile")
    slots = int(round(DAY / interval))
    for p in profiles:
        if len(p) != slots:
            raise ValueError(f"day profile has {len(p)} slots, expected {slots}")
    if isinstance(days, int):
        days = calendar_year(days)
    out = []
    k = 0
    for day in days:
        profile = profiles[profile_index(day, len(profiles))]
        midnight = datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp()
        for j, n in enumerate(profile):
            out.append(_interval(k, midnight + j * interval, n))
            k += 1
    return out


INTERVAL_FIELDS = ["k", "start_iso", "n", "occupied"]


def _fmt_n(n: float) -> str:
    return str(int(n)) if float(n).is_integer() else repr(float(n))


def write_intervals(intervals: Iterable[IntervalSample], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(INTERVAL_FIELDS)
    for iv in intervals:
        writer.writerow([iv.k, iv.start_iso, _fmt_n(iv.n), int(iv.occupied)])


def read_intervals(stream: Iterable[str]) -> list[IntervalSample]:
    out = []
    for lineno, row in enumerate(csv.DictReader(stream), start=2):
        try:
            out.append(_interval(int(row["k"]), parse_timestamp(row["start_iso"]), float(row["n"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: malformed interval row ({exc})") from None
    return out
