import io
import json

import numpy as np
import pytest

from occtool.ingest import GroundTruthRecord
from occtool.metrics import (
    ConfusionMatrix,
    binarize,
    combine,
    confusion,
    evaluate,
    exact_accuracy,
    fragmentation,
    id_switches,
    mae,
    rmse,
    round_half_up,
    scores_from_confusion,
    write_per_video_csv,
    write_report_json,
)
from occtool.samples import OccupancySample

from oracles import brute_exact, brute_fragmentation, brute_id_switches, brute_mae, brute_rmse


def test_regression_metrics_against_oracle():
    rng = np.random.default_rng(1)
    for _ in range(500):
        n = int(rng.integers(1, 51))
        y = rng.integers(0, 6, n).tolist()
        yh = rng.integers(0, 6, n).tolist()
        assert mae(y, yh) == pytest.approx(brute_mae(y, yh), abs=1e-12)
        assert rmse(y, yh) == pytest.approx(brute_rmse(y, yh), abs=1e-12)
        assert exact_accuracy(y, yh) == pytest.approx(brute_exact(y, yh), abs=1e-12)


def test_regression_metric_errors():
    with pytest.raises(ValueError):
        mae([1, 2], [1])
    with pytest.raises(ValueError):
        rmse([], [])


def test_confusion_and_scores():
    cm = confusion(binarize([0, 0, 2, 1, 3]), binarize([1, 0, 0, 1, 2]))
    assert cm == ConfusionMatrix(tn=1, fp=1, fn=1, tp=2)
    sc = scores_from_confusion(cm)
    assert sc.accuracy == pytest.approx(3 / 5)
    assert sc.precision == pytest.approx(2 / 3)
    assert sc.recall == pytest.approx(2 / 3)
    assert sc.f1 == pytest.approx(2 / 3)
    assert sc.undefined == ()


def test_zero_denominators_are_flagged():
    sc = scores_from_confusion(ConfusionMatrix(tn=5))
    assert (sc.precision, sc.recall, sc.f1) == (0.0, 0.0, 0.0)
    assert set(sc.undefined) == {"precision", "recall", "f1"}
    with pytest.raises(ValueError):
        scores_from_confusion(ConfusionMatrix())


def test_combine_adds_cells():
    assert combine([ConfusionMatrix(1, 2, 3, 4), ConfusionMatrix(1, 1, 1, 1)]) == ConfusionMatrix(2, 3, 4, 5)


def test_round_half_up():
    assert round_half_up(0.12345) == 0.1235
    assert round_half_up(0.12344) == 0.1234
    assert round_half_up(2.5, 0) == 3.0


def _traj(frames, x=0.0):
    return [(f, (x, 0.0, 10.0, 10.0)) for f in frames]


def test_id_switch_and_fragmentation_hand_cases():
    gt = {1: _traj(range(6))}
    box = (0.0, 0.0, 10.0, 10.0)
    pred = {0: [(7, box)], 1: [(7, box)], 2: [], 3: [(8, box)], 4: [(8, box)], 5: [(7, box)]}
    assert id_switches(gt, pred) == 2
    assert fragmentation(gt, pred) == 1
    assert brute_id_switches(gt, pred) == 2
    assert brute_fragmentation(gt, pred) == 1


def test_identity_metrics_against_oracle_on_jittered_tracks():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n_gt = int(rng.integers(1, 4))
        frames = range(int(rng.integers(5, 25)))
        gt = {g: _traj(frames, 40.0 * g) for g in range(n_gt)}
        pred = {}
        for f in frames:
            row = []
            for g in range(n_gt):
                if rng.random() < 0.2:
                    continue
                tid = int(rng.integers(0, 3)) + 10 * g
                dx = float(rng.uniform(-6, 6))
                row.append((tid, (40.0 * g + dx, 0.0, 10.0, 10.0)))
            pred[f] = row
        assert id_switches(gt, pred) == brute_id_switches(gt, pred)
        assert fragmentation(gt, pred) == brute_fragmentation(gt, pred)


def _gt(video, counts):
    return [GroundTruthRecord(video, i, c) for i, c in enumerate(counts)]


def _pred(video, counts):
    return [OccupancySample(video, i, float(i), c, 0.9, "detector") for i, c in enumerate(counts)]


def test_evaluate_frame_weighted_and_per_video():
    gt = _gt("a", [0, 1, 2]) + _gt("b", [1, 1])
    pred = _pred("a", [0, 1, 3]) + _pred("b", [0, 1])
    rep = evaluate(gt, pred)
    assert rep.n_frames == 5
    assert rep.mae == pytest.approx(2 / 5)
    assert rep.confusion == ConfusionMatrix(tn=1, fp=0, fn=1, tp=3)
    assert rep.per_video["a"]["mae"] == pytest.approx(1 / 3)
    assert rep.per_video["b"]["fn"] == 1
    assert rep.id_switches is None


def test_evaluate_skips_unshared_frames_and_requires_overlap():
    rep = evaluate(_gt("a", [1, 1, 1]), _pred("a", [1, 1]))
    assert rep.n_frames == 2
    with pytest.raises(ValueError):
        evaluate(_gt("a", [1]), _pred("b", [1]))


def test_report_serialization_rounded():
    rep = evaluate(_gt("a", [0, 1, 2]), _pred("a", [1, 1, 1]))
    buf = io.StringIO()
    write_report_json(rep, buf)
    d = json.loads(buf.getvalue())
    assert d["mae"] == 0.6667
    assert d["confusion"] == {"tn": 0, "fp": 1, "fn": 0, "tp": 2}
    buf = io.StringIO()
    write_per_video_csv(rep, buf)
    assert buf.getvalue().splitlines()[0] == "video,mae,rmse,exact_acc,acc,prec,rec,f1,fn,fp"
