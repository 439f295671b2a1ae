"""Counting, occupied/unoccupied classification and identity-stability metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ingest import Box, GroundTruthRecord
from .samples import OccupancySample
from .tracking import TrackBoxes, assign, iou_matrix


def round_half_up(value: float, places: int = 4) -> float:
    if value is None or not math.isfinite(value):
        return value
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_UP))


def _aligned(y: Sequence[float], y_hat: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    if len(y) != len(y_hat):
        raise ValueError(f"series lengths differ: {len(y)} vs {len(y_hat)}")
    if len(y) == 0:
        raise ValueError("cannot score an empty series")
    return np.asarray(y, dtype=float), np.asarray(y_hat, dtype=float)


def mae(y: Sequence[float], y_hat: Sequence[float]) -> float:
    a, b = _aligned(y, y_hat)
    return float(np.mean(np.abs(b - a)))


def rmse(y: Sequence[float], y_hat: Sequence[float]) -> float:
    a, b = _aligned(y, y_hat)
    return float(np.sqrt(np.mean((b - a) ** 2)))


def exact_accuracy(y: Sequence[float], y_hat: Sequence[float]) -> float:
    a, b = _aligned(y, y_hat)
    return float(np.mean(a == b))


def binarize(counts: Sequence[int]) -> list[int]:
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    return [1 if c > 0 else 0 for c in counts]


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int = 0
    fp: int = 0
    fn: int = 0
    tp: int = 0

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tn + other.tn, self.fp + other.fp, self.fn + other.fn, self.tp + other.tp)


def confusion(z: Sequence[int], z_hat: Sequence[int]) -> ConfusionMatrix:
    """Tally a 2x2 confusion matrix with occupied (1) as the positive class."""
    if len(z) != len(z_hat):
        raise ValueError("state series lengths differ")
    tn = fp = fn = tp = 0
    for truth, pred in zip(z, z_hat):
        if truth and pred:
            tp += 1
        elif truth:
            fn += 1
        elif pred:
            fp += 1
        else:
            tn += 1
    return ConfusionMatrix(tn, fp, fn, tp)


@dataclass(frozen=True)
class ClassificationScores:
    accuracy: float
    precision: float
    recall: float
    f1: float
    # names of scores whose denominator was zero and were reported as 0
    undefined: tuple[str, ...] = ()


def scores_from_confusion(cm: ConfusionMatrix) -> ClassificationScores:
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")
    undefined = []
    accuracy = (cm.tn + cm.tp) / cm.total
    if cm.tp + cm.fp:
        precision = cm.tp / (cm.tp + cm.fp)
    else:
        precision = 0.0
        undefined.append("precision")
    if cm.tp + cm.fn:
        recall = cm.tp / (cm.tp + cm.fn)
    else:
        recall = 0.0
        undefined.append("recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        undefined.append("f1")
    return ClassificationScores(accuracy, precision, recall, f1, tuple(undefined))


# --------------------------------------------------------------------------- #
# identity metrics

# gt_id -> [(frame, box), ...]
Trajectories = Mapping[int, Sequence[tuple[int, Box]]]


def match_identities(
    gt: Trajectories, predicted: TrackBoxes, iou_match: float = 0.5
) -> dict[int, dict[int, int | None]]:
    """For every GT trajectory, the track id matched in each frame it exists (``None`` if unmatched)."""
    frames: dict[int, list[tuple[int, Box]]] = {}
    for gt_id, traj in gt.items():
        for frame, box in traj:
            frames.setdefault(frame, []).append((gt_id, box))
    out: dict[int, dict[int, int | None]] = {gt_id: {} for gt_id in gt}
    for frame in sorted(frames):
        gts = frames[frame]
        preds = predicted.get(frame, [])
        cost = 1.0 - iou_matrix([b for _, b in gts], [b for _, b in preds])
        matches, _, _ = assign(cost, 1.0 - iou_match)
        hit = {gi: preds[pj][0] for gi, pj in matches}
        for gi, (gt_id, _) in enumerate(gts):
            out[gt_id][frame] = hit.get(gi)
    return out


def id_switches(gt: Trajectories, predicted: TrackBoxes, iou_match: float = 0.5) -> int:
    switches = 0
    for per_frame in match_identities(gt, predicted, iou_match).values():
        last = None
        for frame in sorted(per_frame):
            tid = per_frame[frame]
            if tid is None:
                continue
            if last is not None and tid != last:
                switches += 1
            last = tid
    return switches


def fragmentation(gt: Trajectories, predicted: TrackBoxes, iou_match: float = 0.5) -> int:
    frags = 0
    for per_frame in match_identities(gt, predicted, iou_match).values():
        coverage = [per_frame[f] is not None for f in sorted(per_frame)]
        for i in range(1, len(coverage)):
            if coverage[i - 1] and not coverage[i] and any(coverage[i:]):
                frags += 1
    return frags


# --------------------------------------------------------------------------- #
# reports

@dataclass
class MetricsReport:
    n_frames: int
    mae: float
    rmse: float
    exact_accuracy: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: ConfusionMatrix
    id_switches: int | None = None
    fragmentation: int | None = None
    undefined: tuple[str, ...] = ()
    per_video: dict[str, dict] = field(default_factory=dict)

    def to_dict(self, rounded: bool = True) -> dict:
        d = asdict(self)
        d["confusion"] = asdict(self.confusion)
        d["undefined"] = list(self.undefined)
        if rounded:
            for key in ("mae", "rmse", "exact_accuracy", "accuracy", "precision", "recall", "f1"):
                d[key] = round_half_up(d[key])
            for row in d["per_video"].values():
                for key in ("mae", "rmse", "exact_acc", "acc", "prec", "rec", "f1"):
                    row[key] = round_half_up(row[key])
        return d


def _score_rows(y: list[int], y_hat: list[int]) -> tuple[float, float, float, ConfusionMatrix, ClassificationScores]:
    cm = confusion(binarize(y), binarize(y_hat))
    return mae(y, y_hat), rmse(y, y_hat), exact_accuracy(y, y_hat), cm, scores_from_confusion(cm)


def evaluate(
    gt: Sequence[GroundTruthRecord],
    predicted: Sequence[OccupancySample],
    identity: Mapping[str, Trajectories] | None = None,
    tracks: Mapping[str, TrackBoxes] | None = None,
    iou_match: float = 0.5,
) -> MetricsReport:
    """Frame-weighted global metrics over frames present in both GT and prediction, plus per-video rows.

    Identity metrics are filled in only when both identity GT and predicted
    track boxes are supplied.
    """
    pred = {(s.video_id, s.frame_idx): s.count for s in predicted}
    by_video: dict[str, tuple[list[int], list[int]]] = {}
    for rec in gt:
        key = (rec.video_id, rec.frame_idx)
        if key in pred:
            ys, yh = by_video.setdefault(rec.video_id, ([], []))
            ys.append(rec.count)
            yh.append(pred[key])
    if not by_video:
        raise ValueError("no frames shared between ground truth and prediction")

    all_y = [v for video in sorted(by_video) for v in by_video[video][0]]
    all_h = [v for video in sorted(by_video) for v in by_video[video][1]]
    m, r, ex, cm, sc = _score_rows(all_y, all_h)

    per_video = {}
    for video in sorted(by_video):
        vm, vr, vex, vcm, vsc = _score_rows(*by_video[video])
        per_video[video] = {
            "mae": vm, "rmse": vr, "exact_acc": vex, "acc": vsc.accuracy, "prec": vsc.precision,
            "rec": vsc.recall, "f1": vsc.f1, "fn": vcm.fn, "fp": vcm.fp,
        }

    ids = frag = None
    if identity and tracks:
        ids = frag = 0
        for video, trajectories in identity.items():
            if video in tracks:
                ids += id_switches(trajectories, tracks[video], iou_match)
                frag += fragmentation(trajectories, tracks[video], iou_match)
    return MetricsReport(len(all_y), m, r, ex, sc.accuracy, sc.precision, sc.recall, sc.f1,
                         cm, ids, frag, sc.undefined, per_video)


def write_report_json(report: MetricsReport, stream) -> None:
    json.dump(report.to_dict(), stream, indent=2, sort_keys=True)
    stream.write("\n")


PER_VIDEO_FIELDS = ["video", "mae", "rmse", "exact_acc", "acc", "prec", "rec", "f1", "fn", "fp"]


def write_per_video_csv(report: MetricsReport, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(PER_VIDEO_FIELDS)
    for video, row in report.to_dict()["per_video"].items():
        writer.writerow([video] + [row[k] for k in PER_VIDEO_FIELDS[1:]])


def combine(matrices: Iterable[ConfusionMatrix]) -> ConfusionMatrix:
    total = ConfusionMatrix()
    for cm in matrices:
        total = total + cm
    return total
