import sys
from datetime import datetime, timezone
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from occtool.control import ControlConfig, ZoneModel, dump_sim_config  # noqa: E402
from occtool.comfort import ComfortParams  # noqa: E402
from occtool.ingest import dump_detection_log, format_timestamp  # noqa: E402
from occtool.synthetic import Target, dip_score, make_scene  # noqa: E402

T0 = datetime(2023, 4, 3, 8, 0, tzinfo=timezone.utc).timestamp()


@pytest.fixture
def workspace(tmp_path):
    """Detections, count GT, identity GT, weather and sim config for a small two-person scene."""
    targets = [
        Target(1, 0, 0, 1.5, 0, last=150),
        Target(2, 400, 200, -1.0, 0.2, first=20),
    ]
    obs, ident = make_scene(targets, 240, video="cam1", score=dip_score(1, 60, 3), t0=T0, fps=1 / 30)
    det = tmp_path / "detections.jsonl"
    with open(det, "w") as fh:
        dump_detection_log(obs, fh)

    gt = tmp_path / "gt.csv"
    with open(gt, "w") as fh:
        fh.write("video,frame,count\n")
        for o in obs:
            n = sum(1 for traj in ident["cam1"].values() for f, _ in traj if f == o.frame_idx)
            fh.write(f"cam1,{o.frame_idx},{n}\n")

    mot = tmp_path / "cam1.csv"
    with open(mot, "w") as fh:
        fh.write("frame,id,x,y,w,h\n")
        for gid, traj in ident["cam1"].items():
            for f, (x, y, w, h) in traj:
                fh.write(f"{f},{gid},{x},{y},{w},{h}\n")

    weather = tmp_path / "weather.csv"
    with open(weather, "w") as fh:
        fh.write("timestamp,tout_c\n")
        for h, temp in enumerate([8.0, 10.0, 13.0, 15.0]):
            fh.write(f"{format_timestamp(T0 - 3600 + 3600 * h)},{temp}\n")

    cfg = tmp_path / "sim.cfg"
    with open(cfg, "w") as fh:
        dump_sim_config(ZoneModel(), ControlConfig(), ComfortParams(), fh)

    return {"root": tmp_path, "detections": det, "gt": gt, "mot": mot, "weather": weather, "config": cfg}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
