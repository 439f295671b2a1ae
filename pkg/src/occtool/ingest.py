"""Parsers for detection logs, ground truth, identity ground truth and weather.

All parsers take an open text stream (anything iterable over lines) so they can
be fed from files, ``io.StringIO`` or stdin alike.
"""
from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence, TextIO

import numpy as np

DEFAULT_CONF_THRESHOLD = 0.5

Box = tuple[float, float, float, float]


class IngestError(ValueError):
    """Raised when an input file violates its format contract."""


def f_to_c(temp_f: float) -> float:
    return (temp_f - 32.0) * 5.0 / 9.0


def c_to_f(temp_c: float) -> float:
    return temp_c * 9.0 / 5.0 + 32.0


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    w: float
    h: float
    score: float
    embedding: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise IngestError(f"detection box must have positive size, got w={self.w} h={self.h}")
        if not 0.0 <= self.score <= 1.0:
            raise IngestError(f"detection score {self.score} outside [0, 1]")

    @property
    def box(self) -> Box:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class FrameObservation:
    """Detections for one frame plus the thresholded count and mean confidence.

    ``detections`` keeps every raw detection (the two-stage tracker needs the
    sub-threshold ones); ``count`` and ``mean_conf`` only see scores >= ``threshold``.
    """

    video_id: str
    frame_idx: int
    timestamp: float
    detections: tuple[Detection, ...] = ()
    threshold: float = DEFAULT_CONF_THRESHOLD
    count: int = field(init=False)
    mean_conf: float = field(init=False)

    def __post_init__(self):
        kept = [d.score for d in self.detections if d.score >= self.threshold]
        object.__setattr__(self, "count", len(kept))
        object.__setattr__(self, "mean_conf", float(sum(kept) / len(kept)) if kept else 0.0)

    def retained(self) -> list[Detection]:
        return [d for d in self.detections if d.score >= self.threshold]


@dataclass(frozen=True)
class GroundTruthRecord:
    video_id: str
    frame_idx: int
    count: int
    identity_boxes: tuple[tuple[int, Box], ...] = ()


# video -> gt_id -> [(frame, box), ...] with frames strictly increasing
IdentityGroundTruth = dict[str, dict[int, list[tuple[int, Box]]]]


def _unit(vec: Sequence[float]) -> tuple[float, ...]:
    arr = np.asarray(vec, dtype=float)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise IngestError("embedding has zero norm")
    if abs(norm - 1.0) > 1e-12:
        arr = arr / norm
    return tuple(float(v) for v in arr)


def _parse_detection(obj: dict, lineno: int, emb_dim: list[int | None]) -> Detection:
    try:
        emb = obj.get("emb")
        if emb is not None:
            if emb_dim[0] is None:
                emb_dim[0] = len(emb)
            elif len(emb) != emb_dim[0]:
                raise IngestError(
                    f"line {lineno}: embedding length {len(emb)} differs from file dimension {emb_dim[0]}"
                )
            emb = _unit(emb)
        return Detection(
            float(obj["x"]), float(obj["y"]), float(obj["w"]), float(obj["h"]),
            float(obj["score"]), emb,
        )
    except IngestError as exc:
        if str(exc).startswith("line "):
            raise
        raise IngestError(f"line {lineno}: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"line {lineno}: malformed detection ({exc!r})") from None


def parse_detection_log(stream: Iterable[str], threshold: float = DEFAULT_CONF_THRESHOLD) -> list[FrameObservation]:
    """Parse a detection JSONL log into gap-free per-frame observations.

    Missing frame indices inside a video are materialized as empty frames whose
    timestamp is linearly interpolated between the neighbouring frames.
    Observations are returned sorted by ``(video_id, frame_idx)``.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"confidence threshold {threshold} outside [0, 1]")
    emb_dim: list[int | None] = [None]
    per_video: dict[str, dict[int, tuple[float, tuple[Detection, ...]]]] = defaultdict(dict)
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            video = str(obj["video"])
            frame = obj["frame"]
            ts = float(obj["ts"])
            raw_dets = obj.get("dets", [])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"line {lineno}: malformed record ({exc})") from None
        if not isinstance(frame, int) or isinstance(frame, bool) or frame < 0:
            raise IngestError(f"line {lineno}: frame must be a non-negative integer")
        if not isinstance(raw_dets, list) or not math.isfinite(ts):
            raise IngestError(f"line {lineno}: malformed record")
        if frame in per_video[video]:
            raise IngestError(f"line {lineno}: duplicate frame {frame} for video {video!r}")
        dets = tuple(_parse_detection(d, lineno, emb_dim) for d in raw_dets)
        per_video[video][frame] = (ts, dets)

    out: list[FrameObservation] = []
    for video in sorted(per_video):
        frames = per_video[video]
        idx = sorted(frames)
        stamps = [frames[i][0] for i in idx]
        for prev, nxt, fp, fn in zip(stamps, stamps[1:], idx, idx[1:]):
            if nxt <= prev:
                raise IngestError(
                    f"video {video!r}: timestamps not increasing between frames {fp} and {fn}"
                )
        for i in range(idx[0], idx[-1] + 1):
            if i in frames:
                ts, dets = frames[i]
            else:
                ts, dets = float(np.interp(i, idx, stamps)), ()
            out.append(FrameObservation(video, i, ts, dets, threshold))
    return out


def dump_detection_log(observations: Iterable[FrameObservation], stream: TextIO) -> None:
    for obs in observations:
        dets = []
        for d in obs.detections:
            rec = {"x": d.x, "y": d.y, "w": d.w, "h": d.h, "score": d.score}
            if d.embedding is not None:
                rec["emb"] = list(d.embedding)
            dets.append(rec)
        rec = {"video": obs.video_id, "frame": obs.frame_idx, "ts": obs.timestamp, "dets": dets}
        stream.write(json.dumps(rec) + "\n")


def group_by_video(observations: Iterable[FrameObservation]) -> dict[str, list[FrameObservation]]:
    groups: dict[str, list[FrameObservation]] = {}
    for obs in observations:
        groups.setdefault(obs.video_id, []).append(obs)
    return {v: groups[v] for v in sorted(groups)}


def parse_ground_truth(stream: Iterable[str]) -> list[GroundTruthRecord]:
    """Parse a ``video,frame,count`` CSV; records come back sorted by (video, frame)."""
    reader = csv.DictReader(stream)
    seen: dict[tuple[str, int], GroundTruthRecord] = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            video = row["video"].strip()
            frame = int(row["frame"])
            count = int(row["count"])
        except (KeyError, TypeError, ValueError, AttributeError):
            raise IngestError(f"line {lineno}: malformed ground-truth row {row!r}") from None
        if count < 0:
            raise IngestError(f"line {lineno}: negative count {count}")
        if frame < 0:
            raise IngestError(f"line {lineno}: negative frame index {frame}")
        key = (video, frame)
        if key in seen:
            raise IngestError(f"line {lineno}: duplicate ground truth for video {video!r} frame {frame}")
        seen[key] = GroundTruthRecord(video, frame, count)
    return [seen[k] for k in sorted(seen)]


def parse_identity_ground_truth(stream: Iterable[str], video_id: str) -> IdentityGroundTruth:
    """Parse a MOT-style ``frame,id,x,y,w,h,...`` file for a single video."""
    tracks: dict[int, dict[int, Box]] = defaultdict(dict)
    for lineno, row in enumerate(csv.reader(stream), start=1):
        if not row or not "".join(row).strip():
            continue
        try:
            frame, gt_id = int(float(row[0])), int(float(row[1]))
            box = tuple(float(v) for v in row[2:6])
        except (ValueError, IndexError):
            if lineno == 1:  # header line
                continue
            raise IngestError(f"line {lineno}: malformed identity row {row!r}") from None
        if len(box) != 4 or box[2] <= 0 or box[3] <= 0:
            raise IngestError(f"line {lineno}: invalid box {box}")
        if frame in tracks[gt_id]:
            raise IngestError(f"line {lineno}: duplicate (frame {frame}, id {gt_id})")
        tracks[gt_id][frame] = box  # type: ignore[assignment]
    return {video_id: {i: sorted(tracks[i].items()) for i in sorted(tracks)}}


def identity_frame_counts(identity: IdentityGroundTruth) -> dict[tuple[str, int], int]:
    counts: dict[tuple[str, int], int] = defaultdict(int)
    for video, trajectories in identity.items():
        for traj in trajectories.values():
            for frame, _ in traj:
                counts[(video, frame)] += 1
    return dict(counts)


def check_identity_consistency(identity: IdentityGroundTruth, records: Iterable[GroundTruthRecord]) -> None:
    """Raise if identity boxes per frame disagree with the count ground truth."""
    counts = identity_frame_counts(identity)
    for rec in records:
        if rec.video_id not in identity:
            continue
        have = counts.get((rec.video_id, rec.frame_idx), 0)
        if have != rec.count:
            raise IngestError(
                f"video {rec.video_id!r} frame {rec.frame_idx}: count {rec.count} "
                f"but {have} identity boxes"
            )


def parse_timestamp(text: str) -> float:
    """ISO-8601 to POSIX seconds; naive timestamps are taken as UTC."""
    dt = datetime.fromisoformat(text.strip())
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def format_timestamp(seconds: float) -> str:
    return datetime.fromtimestamp(seconds, tz=timezone.utc).replace(tzinfo=None).isoformat()


@dataclass(frozen=True)
class WeatherSeries:
    times: tuple[float, ...]
    tout_c: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) < 2 or len(self.times) != len(self.tout_c):
            raise IngestError("weather series needs at least two (timestamp, value) rows")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise IngestError("weather timestamps must be strictly increasing")

    def lookup(self, t: float) -> float:
        return lookup(self, t)


def parse_weather(stream: Iterable[str]) -> WeatherSeries:
    reader = csv.DictReader(stream)
    times, temps = [], []
    for lineno, row in enumerate(reader, start=2):
        try:
            times.append(parse_timestamp(row["timestamp"]))
            temps.append(float(row["tout_c"]))
        except (KeyError, TypeError, ValueError, AttributeError):
            raise IngestError(f"line {lineno}: malformed weather row {row!r}") from None
    return WeatherSeries(tuple(times), tuple(temps))


def lookup(weather: WeatherSeries, t: float) -> float:
    """Outdoor temperature at ``t`` (POSIX seconds), linear between samples, clamped outside."""
    times = weather.times
    if t <= times[0]:
        return weather.tout_c[0]
    if t >= times[-1]:
        return weather.tout_c[-1]
    i = bisect_right(times, t) - 1
    t0, t1 = times[i], times[i + 1]
    v0, v1 = weather.tout_c[i], weather.tout_c[i + 1]
    return v0 + (v1 - v0) * (t - t0) / (t1 - t0)
