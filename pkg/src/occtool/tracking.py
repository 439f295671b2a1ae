"""Tracking-by-detection occupancy counting.

Three trackers share one constant-velocity Kalman filter and one gated
Hungarian assignment:

* ``sort``      - IoU association only.
* ``deepsort``  - matching cascade over track age with a blended appearance/IoU
  cost whenever embeddings are present.
* ``bytetrack`` - high-score detections first, then the leftover active tracks
  against low-score detections.

The per-frame occupancy estimate is the number of confirmed tracks matched in
that frame.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ingest import Box, Detection, FrameObservation
from .samples import OccupancySample

TRACKER_KINDS = ("none", "sort", "deepsort", "bytetrack")

_SOURCE = {
    "none": "detector",
    "sort": "tracker_sort",
    "deepsort": "tracker_deepsort",
    "bytetrack": "tracker_bytetrack",
}


class TrackStatus(str, Enum):
    TENTATIVE = "tentative"
    CONFIRMED = "confirmed"
    LOST = "lost"


@dataclass(frozen=True)
class TrackerConfig:
    iou_gate: float = 0.3
    max_age: int = 30
    min_hits: int = 3
    high_thresh: float = 0.6
    low_thresh: float = 0.1
    appearance_weight: float = 0.5
    embedding_gate: float = 0.4
    gallery_size: int = 10

    def __post_init__(self):
        if not 0.0 < self.iou_gate <= 1.0:
            raise ValueError("iou_gate must lie in (0, 1]")
        if not 0.0 <= self.low_thresh < self.high_thresh <= 1.0:
            raise ValueError("need 0 <= low_thresh < high_thresh <= 1")
        if not 0.0 <= self.appearance_weight <= 1.0:
            raise ValueError("appearance_weight must lie in [0, 1]")
        if self.max_age < 0 or self.min_hits < 1 or self.gallery_size < 1:
            raise ValueError("max_age >= 0, min_hits >= 1 and gallery_size >= 1 required")

    @property
    def iou_cost_gate(self) -> float:
        return 1.0 - self.iou_gate


# --------------------------------------------------------------------------- #
# Kalman filter on (cx, cy, aspect, height, and their velocities)

_STD_POSITION = 1.0 / 20
_STD_VELOCITY = 1.0 / 160
_NDIM = 4

_MOTION = np.eye(2 * _NDIM)
_MOTION[:_NDIM, _NDIM:] = np.eye(_NDIM)
_OBSERVE = np.eye(_NDIM, 2 * _NDIM)


def box_to_xyah(box: Sequence[float]) -> np.ndarray:
    x, y, w, h = box
    return np.array([x + w / 2.0, y + h / 2.0, w / h, h], dtype=float)


def xyah_to_box(xyah: Sequence[float]) -> Box:
    cx, cy, a, h = (float(v) for v in xyah[:4])
    w = a * h
    return (cx - w / 2.0, cy - h / 2.0, w, h)


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


def kalman_initiate(measurement: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = np.r_[measurement, np.zeros(_NDIM)]
    h = measurement[3]
    std = [
        2 * _STD_POSITION * h, 2 * _STD_POSITION * h, 1e-2, 2 * _STD_POSITION * h,
        10 * _STD_VELOCITY * h, 10 * _STD_VELOCITY * h, 1e-5, 10 * _STD_VELOCITY * h,
    ]
    return mean, np.diag(np.square(std))


def kalman_predict_state(mean: np.ndarray, cov: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = mean[3]
    std = [
        _STD_POSITION * h, _STD_POSITION * h, 1e-2, _STD_POSITION * h,
        _STD_VELOCITY * h, _STD_VELOCITY * h, 1e-5, _STD_VELOCITY * h,
    ]
    noise = np.diag(np.square(std))
    mean = _MOTION @ mean
    cov = _symmetrize(_MOTION @ cov @ _MOTION.T + noise)
    return mean, cov


def kalman_update_state(mean: np.ndarray, cov: np.ndarray, measurement: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = mean[3]
    std = [_STD_POSITION * h, _STD_POSITION * h, 1e-1, _STD_POSITION * h]
    innov_cov = _OBSERVE @ cov @ _OBSERVE.T + np.diag(np.square(std))
    gain = np.linalg.solve(innov_cov, _OBSERVE @ cov).T
    mean = mean + gain @ (measurement - _OBSERVE @ mean)
    # Joseph form keeps the covariance PSD under round-off
    ikh = np.eye(2 * _NDIM) - gain @ _OBSERVE
    cov = ikh @ cov @ ikh.T + gain @ np.diag(np.square(std)) @ gain.T
    return mean, _symmetrize(cov)


@dataclass
class Track:
    id: int
    mean: np.ndarray
    covariance: np.ndarray
    status: TrackStatus = TrackStatus.TENTATIVE
    hits: int = 1
    age: int = 1
    time_since_update: int = 0
    gallery: deque = field(default_factory=deque)
    last_score: float = 0.0

    @property
    def box(self) -> Box:
        return xyah_to_box(self.mean)

    @property
    def counted(self) -> bool:
        return self.status is TrackStatus.CONFIRMED and self.time_since_update == 0


def kalman_predict(track: Track) -> Track:
    """Advance ``track`` one frame under the constant-velocity model (in place)."""
    track.mean, track.covariance = kalman_predict_state(track.mean, track.covariance)
    track.age += 1
    track.time_since_update += 1
    return track


# --------------------------------------------------------------------------- #
# association primitives

def iou(box_a: Sequence[float], box_b: Sequence[float]) -> float:
    ax, ay, aw, ah = box_a
    bx, by, bw, bh = box_b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(boxes_a: Sequence[Sequence[float]], boxes_b: Sequence[Sequence[float]]) -> np.ndarray:
    if len(boxes_a) == 0 or len(boxes_b) == 0:
        return np.zeros((len(boxes_a), len(boxes_b)))
    a = np.asarray(boxes_a, dtype=float)[:, None, :]
    b = np.asarray(boxes_b, dtype=float)[None, :, :]
    iw = np.minimum(a[..., 0] + a[..., 2], b[..., 0] + b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 1] + a[..., 3], b[..., 1] + b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return inter / union


_INFEASIBLE = 1e6


def assign(cost: np.ndarray, gate: float) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Gated minimum-cost bipartite matching.

    Entries above ``gate`` are infeasible. Among matchings with the largest
    number of feasible pairs, the one with the lowest total cost is returned.
    Matches come back sorted by row.
    """
    cost = np.asarray(cost, dtype=float)
    n_rows, n_cols = cost.shape if cost.ndim == 2 else (0, 0)
    if n_rows == 0 or n_cols == 0:
        return [], list(range(n_rows)), list(range(n_cols))
    padded = np.where(cost > gate, _INFEASIBLE, cost)
    rows, cols = linear_sum_assignment(padded)
    matches = sorted((int(r), int(c)) for r, c in zip(rows, cols) if cost[r, c] <= gate)
    matched_r = {r for r, _ in matches}
    matched_c = {c for _, c in matches}
    return (
        matches,
        [r for r in range(n_rows) if r not in matched_r],
        [c for c in range(n_cols) if c not in matched_c],
    )


# --------------------------------------------------------------------------- #
# tracker state and lifecycle

@dataclass
class TrackerState:
    tracks: list[Track] = field(default_factory=list)
    next_id: int = 1
    frame: int = -1


def _spawn(state: TrackerState, det: Detection, cfg: TrackerConfig) -> Track:
    mean, cov = kalman_initiate(box_to_xyah(det.box))
    track = Track(state.next_id, mean, cov, gallery=deque(maxlen=cfg.gallery_size), last_score=det.score)
    if det.embedding is not None:
        track.gallery.append(np.asarray(det.embedding))
    if track.hits >= cfg.min_hits:
        track.status = TrackStatus.CONFIRMED
    state.next_id += 1
    state.tracks.append(track)
    return track


def _update(track: Track, det: Detection, cfg: TrackerConfig) -> None:
    track.mean, track.covariance = kalman_update_state(track.mean, track.covariance, box_to_xyah(det.box))
    track.hits += 1
    track.time_since_update = 0
    track.last_score = det.score
    if det.embedding is not None:
        track.gallery.append(np.asarray(det.embedding))
    if track.status is TrackStatus.LOST or track.hits >= cfg.min_hits:
        # a lost track was confirmed before it was lost; tentatives are never kept as lost
        track.status = TrackStatus.CONFIRMED


def _finish_frame(state: TrackerState, unmatched: Iterable[Track], cfg: TrackerConfig) -> None:
    drop = set()
    for track in unmatched:
        if track.status is TrackStatus.TENTATIVE or track.time_since_update > cfg.max_age:
            drop.add(track.id)
        else:
            track.status = TrackStatus.LOST
    state.tracks = [t for t in state.tracks if t.id not in drop]


def _count(state: TrackerState) -> int:
    return sum(1 for t in state.tracks if t.counted)


def _iou_cost(tracks: Sequence[Track], dets: Sequence[Detection]) -> np.ndarray:
    return 1.0 - iou_matrix([t.box for t in tracks], [d.box for d in dets])


def _match_iou(tracks, dets, cfg):
    return assign(_iou_cost(tracks, dets), cfg.iou_cost_gate)


def _predict_all(state: TrackerState) -> None:
    state.frame += 1
    for track in state.tracks:
        kalman_predict(track)


def sort_step(state: TrackerState, obs: FrameObservation, cfg: TrackerConfig) -> tuple[TrackerState, int]:
    """One SORT frame: predict, IoU-gated assignment, update, spawn, age."""
    dets = obs.retained()
    _predict_all(state)
    tracks = list(state.tracks)
    matches, um_tracks, um_dets = _match_iou(tracks, dets, cfg)
    for ti, di in matches:
        _update(tracks[ti], dets[di], cfg)
    _finish_frame(state, [tracks[i] for i in um_tracks], cfg)
    for di in um_dets:
        _spawn(state, dets[di], cfg)
    return state, _count(state)


def _cosine_distance(track: Track, det: Detection) -> float | None:
    if det.embedding is None or not track.gallery:
        return None
    gallery = np.asarray(track.gallery)
    return float(np.min(1.0 - gallery @ np.asarray(det.embedding)))


def _appearance_cost(tracks: Sequence[Track], dets: Sequence[Detection], cfg: TrackerConfig) -> np.ndarray:
    iou_cost = _iou_cost(tracks, dets)
    cost = iou_cost.copy()
    lam = cfg.appearance_weight
    for i, track in enumerate(tracks):
        for j, det in enumerate(dets):
            if iou_cost[i, j] > cfg.iou_cost_gate:
                cost[i, j] = _INFEASIBLE
                continue
            dist = _cosine_distance(track, det)
            if dist is None:
                continue
            if dist > cfg.embedding_gate:
                cost[i, j] = _INFEASIBLE
            else:
                cost[i, j] = lam * dist + (1.0 - lam) * iou_cost[i, j]
    return cost


def deepsort_step(state: TrackerState, obs: FrameObservation, cfg: TrackerConfig) -> tuple[TrackerState, int]:
    """One DeepSORT-style frame.

    With embeddings in the frame, non-tentative tracks are matched in a cascade
    ordered by frames since their last update, followed by an IoU pass for
    tentative tracks and tracks missed for exactly one frame. Without any
    embeddings the appearance term vanishes and association is the SORT one.
    """
    dets = obs.retained()
    if not any(d.embedding is not None for d in dets):
        return sort_step(state, obs, cfg)

    _predict_all(state)
    remaining = list(range(len(dets)))
    matched: set[int] = set()
    established = [t for t in state.tracks if t.status is not TrackStatus.TENTATIVE]
    for level in range(1, cfg.max_age + 2):
        if not remaining:
            break
        level_tracks = [t for t in established if t.time_since_update == level]
        if not level_tracks:
            continue
        sub = [dets[j] for j in remaining]
        matches, _, _ = assign(_appearance_cost(level_tracks, sub, cfg), cfg.iou_cost_gate)
        used = set()
        for ti, dj in matches:
            _update(level_tracks[ti], sub[dj], cfg)
            matched.add(level_tracks[ti].id)
            used.add(remaining[dj])
        remaining = [j for j in remaining if j not in used]

    second = [
        t for t in state.tracks
        if t.id not in matched and (t.status is TrackStatus.TENTATIVE or t.time_since_update == 1)
    ]
    if second and remaining:
        sub = [dets[j] for j in remaining]
        matches, _, _ = _match_iou(second, sub, cfg)
        used = set()
        for ti, dj in matches:
            _update(second[ti], sub[dj], cfg)
            matched.add(second[ti].id)
            used.add(remaining[dj])
        remaining = [j for j in remaining if j not in used]

    _finish_frame(state, [t for t in state.tracks if t.id not in matched], cfg)
    for j in remaining:
        _spawn(state, dets[j], cfg)
    return state, _count(state)


def bytetrack_step(state: TrackerState, obs: FrameObservation, cfg: TrackerConfig) -> tuple[TrackerState, int]:
    """One two-stage (ByteTrack-style) frame on raw detection scores.

    Stage 1 matches every track against detections scoring >= ``high_thresh``.
    Stage 2 gives confirmed tracks that were active last frame a chance against
    detections in ``[low_thresh, high_thresh)``. Only unmatched high-score
    detections start new tracks.
    """
    high = [d for d in obs.detections if d.score >= cfg.high_thresh]
    low = [d for d in obs.detections if cfg.low_thresh <= d.score < cfg.high_thresh]
    _predict_all(state)
    tracks = list(state.tracks)
    matches, um_tracks, um_high = _match_iou(tracks, high, cfg)
    for ti, di in matches:
        _update(tracks[ti], high[di], cfg)

    leftovers = [tracks[i] for i in um_tracks]
    if low:
        pool = [t for t in leftovers if t.status is TrackStatus.CONFIRMED and t.time_since_update == 1]
        matches2, _, _ = _match_iou(pool, low, cfg)
        rescued = set()
        for ti, di in matches2:
            _update(pool[ti], low[di], cfg)
            rescued.add(pool[ti].id)
        leftovers = [t for t in leftovers if t.id not in rescued]

    _finish_frame(state, leftovers, cfg)
    for di in um_high:
        _spawn(state, high[di], cfg)
    return state, _count(state)


_STEPS = {"sort": sort_step, "deepsort": deepsort_step, "bytetrack": bytetrack_step}

# frame -> [(track_id, box), ...] for tracks counted in that frame
TrackBoxes = dict[int, list[tuple[int, Box]]]


def run_tracker(
    observations: Sequence[FrameObservation], kind: str, cfg: TrackerConfig | None = None
) -> tuple[list[OccupancySample], TrackBoxes]:
    """Per-frame counts plus the boxes of counted tracks (for identity metrics)."""
    if kind not in TRACKER_KINDS:
        raise ValueError(f"unknown tracker kind {kind!r}; expected one of {TRACKER_KINDS}")
    cfg = cfg or TrackerConfig()
    samples: list[OccupancySample] = []
    boxes: TrackBoxes = {}
    if kind == "none":
        for obs in observations:
            samples.append(OccupancySample(obs.video_id, obs.frame_idx, obs.timestamp,
                                           obs.count, obs.mean_conf, "detector"))
        return samples, boxes

    step = _STEPS[kind]
    state = TrackerState()
    video = None
    for obs in observations:
        if video is not None and obs.video_id != video:
            raise ValueError("run_tracker expects observations from a single video")
        video = obs.video_id
        state, count = step(state, obs, cfg)
        counted = [t for t in state.tracks if t.counted]
        conf = float(np.mean([t.last_score for t in counted])) if counted else 0.0
        samples.append(OccupancySample(obs.video_id, obs.frame_idx, obs.timestamp,
                                       count, conf, _SOURCE[kind]))
        boxes[obs.frame_idx] = [(t.id, t.box) for t in counted]
    return samples, boxes


def track_series(
    observations: Sequence[FrameObservation], kind: str, cfg: TrackerConfig | None = None
) -> list[OccupancySample]:
    """Occupancy series for one video from the chosen tracker (``none`` = raw counts)."""
    return run_tracker(observations, kind, cfg)[0]
