"""Synthetic scenes and scenarios with known ground truth.

Used by the test-suite and the demo scripts: linear-motion person boxes with
known identities, and week-long occupancy/weather scenarios for the controller.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import Callable, Sequence

import numpy as np

from .ingest import Detection, FrameObservation, IdentityGroundTruth, WeatherSeries
from .occupancy import IntervalSample, tile_annual_profile


@dataclass(frozen=True)
class Target:
    gt_id: int
    x0: float
    y0: float
    vx: float
    vy: float
    w: float = 40.0
    h: float = 100.0
    first: int = 0
    last: int | None = None
    embedding: tuple[float, ...] | None = None

    def box(self, frame: int) -> tuple[float, float, float, float]:
        dt = frame - self.first
        return (self.x0 + self.vx * dt, self.y0 + self.vy * dt, self.w, self.h)

    def present(self, frame: int) -> bool:
        return frame >= self.first and (self.last is None or frame <= self.last)


ScoreFn = Callable[[int, int], "float | None"]


def make_scene(
    targets: Sequence[Target],
    n_frames: int,
    video: str = "synthetic",
    score: float | ScoreFn = 0.9,
    threshold: float = 0.5,
    fps: float = 1.0,
    t0: float = 0.0,
    jitter: float = 0.0,
    seed: int = 0,
) -> tuple[list[FrameObservation], IdentityGroundTruth]:
    """Observations and identity GT for linear targets.

    ``score`` may be a callable ``(gt_id, frame) -> score | None``; ``None``
    drops the detection (a miss) while the target stays in the ground truth.
    """
    rng = np.random.default_rng(seed)
    observations = []
    gt: dict[int, list] = {t.gt_id: [] for t in targets}
    for f in range(n_frames):
        dets = []
        for t in targets:
            if not t.present(f):
                continue
            box = t.box(f)
            gt[t.gt_id].append((f, box))
            s = score(t.gt_id, f) if callable(score) else score
            if s is None:
                continue
            if jitter:
                noise = rng.normal(0.0, jitter, 2)
                box = (box[0] + noise[0], box[1] + noise[1], box[2], box[3])
            dets.append(Detection(*box, score=float(s), embedding=t.embedding))
        observations.append(FrameObservation(video, f, t0 + f / fps, tuple(dets), threshold))
    return observations, {video: {i: traj for i, traj in gt.items() if traj}}


def random_scene(
    rng: np.random.Generator,
    max_targets: int = 5,
    max_frames: int = 200,
    video: str = "synthetic",
    score: float | ScoreFn = 0.9,
) -> tuple[list[FrameObservation], IdentityGroundTruth]:
    """Random linear targets, each in its own horizontal lane so tracks never overlap."""
    n_targets = int(rng.integers(1, max_targets + 1))
    n_frames = int(rng.integers(20, max_frames + 1))
    targets = []
    for i in range(n_targets):
        first = int(rng.integers(0, n_frames // 2))
        last = int(rng.integers(first + 5, n_frames)) if rng.random() < 0.5 else None
        targets.append(Target(
            gt_id=i + 1,
            x0=float(rng.uniform(0, 400)),
            y0=200.0 * i,
            vx=float(rng.uniform(-3, 3)),
            vy=float(rng.uniform(-0.5, 0.5)),
            first=first,
            last=last,
        ))
    return make_scene(targets, n_frames, video, score)


def dip_score(target_id: int, start: int, length: int = 3, high: float = 0.9, low: float = 0.3) -> ScoreFn:
    def fn(gt_id: int, frame: int) -> float:
        if gt_id == target_id and start <= frame < start + length:
            return low
        return high
    return fn


# --------------------------------------------------------------------------- #
# control scenarios

SLOTS_PER_DAY = 288


def lab_day_profile(seed: int, vacancy: tuple[float, float] = (1.0, 6.0)) -> list[int]:
    """5-minute occupant counts for one lab day: empty during ``vacancy`` hours,
    busy in working blocks, sparse in the evening and early morning."""
    rng = np.random.default_rng(seed)
    out = []
    for j in range(SLOTS_PER_DAY):
        hour = j / 12.0
        if vacancy[0] <= hour < vacancy[1]:
            out.append(0)
        elif 9 <= hour < 12 or 13 <= hour < 18 or 19 <= hour < 22:
            out.append(int(rng.integers(1, 5)))
        else:
            out.append(int(rng.random() < 0.3))
    return out


def diurnal_weather(start: float, days: int, mean: float, amplitude: float, peak_hour: float = 15.0) -> WeatherSeries:
    hours = np.arange(days * 24 + 2)
    temps = mean + amplitude * np.cos(2 * math.pi * (hours - peak_hour) / 24.0)
    return WeatherSeries(tuple(float(start + 3600.0 * h) for h in hours), tuple(float(t) for t in temps))


def week_scenario(
    first_day: date = date(2023, 4, 3),
    n_profiles: int = 5,
    mean_temp: float = 20.0,
    amplitude: float = 5.0,
) -> tuple[list[IntervalSample], WeatherSeries]:
    """Seven tiled lab days (vacant 01:00-06:00) with a matching diurnal weather series."""
    profiles = [lab_day_profile(seed) for seed in range(n_profiles)]
    days = [date.fromordinal(first_day.toordinal() + i) for i in range(7)]
    occupancy = tile_annual_profile(profiles, days)
    start = datetime(first_day.year, first_day.month, first_day.day, tzinfo=timezone.utc).timestamp()
    return occupancy, diurnal_weather(start, 7, mean_temp, amplitude)


def inject_false_negatives(occupancy: Sequence[IntervalSample], fraction: float, seed: int = 0) -> list[IntervalSample]:
    """Zero out ``fraction`` of the occupied intervals, chosen uniformly without replacement."""
    rng = np.random.default_rng(seed)
    occupied = [i for i, iv in enumerate(occupancy) if iv.occupied]
    flip = set(rng.choice(occupied, size=int(round(fraction * len(occupied))), replace=False).tolist())
    return [IntervalSample(iv.k, iv.start, 0, False) if i in flip else iv for i, iv in enumerate(occupancy)]
