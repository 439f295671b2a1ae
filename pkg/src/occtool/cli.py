"""``occtool`` command line.

Exit codes: 0 success, 1 input/validation error (including bad usage),
2 internal error. Diagnostics go to stderr; machine output to files or stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .control import (
    ControlError,
    load_sim_config,
    monthly_rollup,
    read_steps,
    simulate,
    summary,
    write_steps,
    write_summary,
)
from .ingest import IngestError, group_by_video, parse_detection_log, parse_ground_truth, parse_identity_ground_truth, parse_weather
from .metrics import evaluate, write_report_json
from .occupancy import aggregate, read_intervals, write_intervals
from .pipeline import PipelineError, compare_runs, write_comparison
from .refinement import HttpLLMClient, LLMError, RefinementConfig, load_mock, refine_series, write_audit
from .report import render_monthly_charts
from .samples import read_series, write_series
from .tracking import TRACKER_KINDS, TrackerConfig, run_tracker

log = logging.getLogger("occtool")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _open_out(path: str | None):
    if path in (None, "-"):
        return _Stdout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


class _Stdout:
    def __enter__(self):
        return sys.stdout

    def __exit__(self, *exc):
        sys.stdout.flush()
        return False


def _tracks_csv(boxes_by_video, stream) -> None:
    stream.write("video,frame,id,x,y,w,h\n")
    for video, boxes in boxes_by_video.items():
        for frame in sorted(boxes):
            for tid, (x, y, w, h) in boxes[frame]:
                stream.write(f"{video},{frame},{tid},{x!r},{y!r},{w!r},{h!r}\n")


def _read_tracks_csv(stream):
    import csv

    out: dict = {}
    for row in csv.DictReader(stream):
        box = tuple(float(row[k]) for k in "xywh")
        out.setdefault(row["video"], {}).setdefault(int(row["frame"]), []).append((int(row["id"]), box))
    return out


def cmd_track(args) -> int:
    cfg = TrackerConfig(iou_gate=args.iou_gate, max_age=args.max_age, min_hits=args.min_hits,
                        high_thresh=args.high_thresh, low_thresh=args.low_thresh)
    with open(args.detections) as fh:
        observations = parse_detection_log(fh, args.conf)
    series, boxes = [], {}
    for video, obs in group_by_video(observations).items():
        samples, b = run_tracker(obs, args.tracker, cfg)
        series.extend(samples)
        if args.tracker != "none":
            boxes[video] = b
    with _open_out(args.out) as fh:
        write_series(series, fh)
    if args.tracks_out:
        with _open_out(args.tracks_out) as fh:
            _tracks_csv(boxes, fh)
    return 0


def cmd_refine(args) -> int:
    mode = "vision" if args.mode == "vision" else "text_only"
    url = args.llm_url or os.environ.get("OCCTOOL_LLM_URL")
    cfg = RefinementConfig(margin=args.margin, mode=mode, endpoint=url, batch_size=args.batch_size,
                           timeout=args.timeout, retries=args.retries)
    if args.mock:
        client = load_mock(args.mock)
    elif url:
        client = HttpLLMClient(url, args.model, args.timeout, args.retries)
    else:
        raise UsageError("refine: one of --llm-url, --mock or OCCTOOL_LLM_URL is required")
    with open(args.detections) as fh:
        observations = parse_detection_log(fh, args.conf)
    base = None
    if args.series:
        with open(args.series) as fh:
            base = read_series(fh)
    out, audit = [], []
    for video, obs in group_by_video(observations).items():
        video_base = [s for s in base if s.video_id == video] if base is not None else None
        out.extend(refine_series(obs, client, cfg, base=video_base, audit=audit))
    with _open_out(args.out) as fh:
        write_series(out, fh)
    if args.audit:
        with _open_out(args.audit) as fh:
            write_audit(audit, fh)
    return 0


def cmd_eval(args) -> int:
    with open(args.gt) as fh:
        gt = parse_ground_truth(fh)
    with open(args.pred) as fh:
        pred = read_series(fh)
    identity, tracks = None, None
    if args.gt_ids:
        video = args.video or Path(args.gt_ids).stem
        with open(args.gt_ids) as fh:
            identity = parse_identity_ground_truth(fh, video)
        if args.pred_tracks:
            with open(args.pred_tracks) as fh:
                tracks = _read_tracks_csv(fh)
    report = evaluate(gt, pred, identity, tracks)
    with _open_out(args.out) as fh:
        write_report_json(report, fh)
    return 0


def cmd_aggregate(args) -> int:
    with open(args.pred) as fh:
        series = sorted(read_series(fh), key=lambda s: s.timestamp)
    intervals = aggregate(series, args.interval, args.reducer)
    with _open_out(args.out) as fh:
        write_intervals(intervals, fh)
    return 0


def cmd_simulate(args) -> int:
    with open(args.occupancy) as fh:
        occupancy = read_intervals(fh)
    truth = None
    if args.true_occupancy:
        with open(args.true_occupancy) as fh:
            truth = read_intervals(fh)
    with open(args.weather) as fh:
        weather = parse_weather(fh)
    with open(args.config) as fh:
        model, cfg, comfort = load_sim_config(fh)
    result = simulate(occupancy, weather, model, args.controller, cfg, comfort, truth)
    baseline = None
    if args.baseline_run:
        with open(Path(args.baseline_run) / "summary.json") as fh:
            baseline = json.load(fh)["totals"]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "steps.csv", "w", newline="") as fh:
        write_steps(result.steps, fh)
    with open(out_dir / "summary.json", "w") as fh:
        write_summary(summary(result, baseline, Path(args.baseline_run).name if args.baseline_run else "baseline"), fh)
    return 0


def cmd_compare(args) -> int:
    rows = compare_runs([r for r in args.runs.split(",") if r], args.runs_root)
    with _open_out(args.out) as fh:
        write_comparison(rows, fh)
    return 0


def cmd_report(args) -> int:
    rollups = {}
    for rid in [r for r in args.run.split(",") if r]:
        run_dir = Path(args.runs_root) / rid
        if not run_dir.exists():
            run_dir = Path(rid)
        baseline = run_dir / "steps_baseline.csv"
        if baseline.exists() and "baseline" not in rollups:
            with open(baseline) as fh:
                rollups["baseline"] = monthly_rollup(read_steps(fh))
        with open(run_dir / "steps.csv") as fh:
            rollups[run_dir.name] = monthly_rollup(read_steps(fh))
    energy, ppd = render_monthly_charts(rollups)
    out = Path(args.charts)
    out.mkdir(parents=True, exist_ok=True)
    (out / "monthly_energy.svg").write_text(energy)
    (out / "monthly_ppd.svg").write_text(ppd)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occtool", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"occtool {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--version", action="version", version=f"occtool {__version__}")
        p.set_defaults(func=fn)
        return p

    p = add("track", cmd_track, "Per-frame occupancy counts from a detection log")
    p.add_argument("--detections", required=True)
    p.add_argument("--tracker", choices=TRACKER_KINDS, default="none")
    p.add_argument("--conf", type=float, default=0.5, help="detector confidence threshold")
    p.add_argument("--iou-gate", type=float, default=0.3)
    p.add_argument("--max-age", type=int, default=30)
    p.add_argument("--min-hits", type=int, default=3)
    p.add_argument("--high-thresh", type=float, default=0.6)
    p.add_argument("--low-thresh", type=float, default=0.1)
    p.add_argument("--out", default="-")
    p.add_argument("--tracks-out", help="CSV of counted track boxes (for identity metrics)")

    p = add("refine", cmd_refine, "LLM refinement of a detector series with confidence-margin fusion")
    p.add_argument("--detections", required=True)
    p.add_argument("--series", help="series to refine (defaults to detector counts)")
    p.add_argument("--llm-url")
    p.add_argument("--mock", help="echo | fail | fixed:<count>:<conf> | script.json")
    p.add_argument("--model", default="deepseek")
    p.add_argument("--margin", type=float, default=0.15)
    p.add_argument("--mode", choices=("text", "vision"), default="text")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--retries", type=int, default=1)
    p.add_argument("--conf", type=float, default=0.5)
    p.add_argument("--out", default="-")
    p.add_argument("--audit", help="refinement audit JSONL")

    p = add("eval", cmd_eval, "Score a series against frame-level ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--gt-ids", help="MOT-style identity ground truth for one video")
    p.add_argument("--video", help="video id for --gt-ids (default: file stem)")
    p.add_argument("--pred", required=True)
    p.add_argument("--pred-tracks", help="tracks CSV written by 'track --tracks-out'")
    p.add_argument("--out", default="-")

    p = add("aggregate", cmd_aggregate, "Aggregate a frame series into control intervals")
    p.add_argument("--pred", required=True)
    p.add_argument("--interval", type=float, default=300.0)
    p.add_argument("--reducer", choices=("max", "mean", "median", "last"), default="max")
    p.add_argument("--out", default="-")

    p = add("simulate", cmd_simulate, "Closed-loop zone simulation under baseline or MPC control")
    p.add_argument("--occupancy", required=True)
    p.add_argument("--true-occupancy", help="occupancy seen by the plant (defaults to --occupancy)")
    p.add_argument("--weather", required=True)
    p.add_argument("--controller", choices=("baseline", "mpc"), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--baseline-run", help="run directory whose summary.json is the savings reference")
    p.add_argument("--out-dir", required=True)

    p = add("compare", cmd_compare, "Side-by-side metrics table for several runs")
    p.add_argument("--runs", required=True, help="comma-separated run ids")
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--out", default="-")

    p = add("report", cmd_report, "Monthly energy and PPD charts for one or more runs")
    p.add_argument("--run", required=True, help="run id (or comma-separated ids)")
    p.add_argument("--runs-root", default="runs")
    p.add_argument("--charts", required=True, help="output directory for SVG files")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (IngestError, ControlError, PipelineError, LLMError, ValueError, OSError, KeyError) as exc:
        print(f"occtool {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"occtool {args.command}: internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
