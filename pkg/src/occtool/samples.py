"""Occupancy time-series records shared by the tracking and refinement stages."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, TextIO

SOURCES = ("detector", "tracker_sort", "tracker_deepsort", "tracker_bytetrack", "llm_fused")

SERIES_FIELDS = ["video", "frame", "ts", "count", "confidence", "source", "state"]


@dataclass(frozen=True)
class OccupancySample:
    video_id: str
    frame_idx: int
    timestamp: float
    count: int
    confidence: float
    source: str

    def __post_init__(self):
        if self.count < 0 or int(self.count) != self.count:
            raise ValueError(f"occupancy count must be a non-negative integer, got {self.count}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    @property
    def state(self) -> int:
        return 1 if self.count >= 1 else 0


def write_series(samples: Iterable[OccupancySample], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(SERIES_FIELDS)
    for s in samples:
        writer.writerow([s.video_id, s.frame_idx, repr(float(s.timestamp)), s.count,
                         repr(float(s.confidence)), s.source, s.state])


def read_series(stream: Iterable[str]) -> list[OccupancySample]:
    out = []
    for lineno, row in enumerate(csv.DictReader(stream), start=2):
        try:
            sample = OccupancySample(row["video"], int(row["frame"]), float(row["ts"]),
                                     int(row["count"]), float(row["confidence"]), row["source"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"line {lineno}: malformed series row ({exc})") from None
        if "state" in row and row["state"] not in (None, "") and int(row["state"]) != sample.state:
            raise ValueError(f"line {lineno}: state column disagrees with count")
        out.append(sample)
    return out
