"""Named, reproducible experiment runs wiring every stage together.

A run writes ``runs/<id>/`` containing ``manifest.json``, ``series.csv``,
``metrics.json``, ``refine_audit.jsonl`` and, when weather and a simulation
config are supplied, ``steps.csv``, ``steps_baseline.csv``, ``summary.json``
plus two monthly SVG charts.

Ground truth is read only by the evaluation stage: :func:`measure` receives
parsed detections and nothing else.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .control import load_sim_config, monthly_rollup, simulate, summary, write_steps, write_summary
from .ingest import (
    FrameObservation,
    group_by_video,
    parse_detection_log,
    parse_ground_truth,
    parse_identity_ground_truth,
    parse_weather,
)
from .metrics import MetricsReport, evaluate, write_report_json
from .occupancy import aggregate, day_profiles, tile_annual_profile
from .report import render_monthly_charts
from .refinement import (
    LLMClient,
    RefinementConfig,
    client_from_config,
    load_mock,
    refine_series,
    write_audit,
)
from .samples import OccupancySample, write_series
from .tracking import TrackBoxes, TrackerConfig, run_tracker

log = logging.getLogger(__name__)

PIPELINES = ("detector_only", "sort", "deepsort", "bytetrack", "llm_text", "llm_vision")
_TRACKER = {"detector_only": "none", "sort": "sort", "deepsort": "deepsort", "bytetrack": "bytetrack",
            "llm_text": "none", "llm_vision": "none"}


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineSpec:
    name: str
    conf_threshold: float = 0.5
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    refinement: RefinementConfig | None = None
    mock: str | None = None
    interval: float = 300.0
    reducer: str = "max"
    annual_year: int | None = None

    def __post_init__(self):
        if self.name not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.name!r}; expected one of {PIPELINES}")
        if self.name.startswith("llm_"):
            ref = self.refinement or RefinementConfig(mode="vision" if self.name == "llm_vision" else "text_only")
            object.__setattr__(self, "refinement", ref)
            if self.mock is None and not (ref.endpoint or os.environ.get("OCCTOOL_LLM_URL")):
                raise ValueError(f"pipeline {self.name} needs an LLM endpoint or a mock")

    def to_dict(self) -> dict:
        return {
            "name": self.name, "conf_threshold": self.conf_threshold, "tracker": asdict(self.tracker),
            "refinement": asdict(self.refinement) if self.refinement else None, "mock": self.mock,
            "interval": self.interval, "reducer": self.reducer, "annual_year": self.annual_year,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineSpec":
        ref = d.get("refinement")
        return cls(
            name=d["name"], conf_threshold=d.get("conf_threshold", 0.5),
            tracker=TrackerConfig(**d.get("tracker", {})),
            refinement=RefinementConfig(**ref) if ref else None,
            mock=d.get("mock"), interval=d.get("interval", 300.0), reducer=d.get("reducer", "max"),
            annual_year=d.get("annual_year"),
        )


@dataclass(frozen=True)
class PipelineInputs:
    detections: str
    ground_truth: str | None = None
    identity: Mapping[str, str] = field(default_factory=dict)  # video -> MOT csv
    weather: str | None = None
    sim_config: str | None = None
    images: Mapping[str, Mapping[int, str]] = field(default_factory=dict)

    def paths(self) -> dict[str, str]:
        out = {"detections": self.detections}
        for key in ("ground_truth", "weather", "sim_config"):
            if getattr(self, key):
                out[key] = getattr(self, key)
        for video, path in sorted(self.identity.items()):
            out[f"identity:{video}"] = path
        return out


@dataclass
class RunOutcome:
    series: list[OccupancySample]
    report: MetricsReport | None
    manifest: dict
    run_dir: Path


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def default_run_id(spec: PipelineSpec, digests: Mapping[str, str]) -> str:
    blob = json.dumps({"spec": spec.to_dict(), "digests": dict(digests)}, sort_keys=True)
    return f"{spec.name}-{hashlib.sha256(blob.encode()).hexdigest()[:12]}"


def _write_json(path: Path, data) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def measure(
    spec: PipelineSpec,
    observations: Sequence[FrameObservation],
    client: LLMClient | None = None,
    images: Mapping[str, Mapping[int, str]] | None = None,
) -> tuple[list[OccupancySample], dict[str, TrackBoxes], list[dict]]:
    """Measurement stages only: detections in, occupancy series out. No ground truth."""
    series: list[OccupancySample] = []
    tracks: dict[str, TrackBoxes] = {}
    audit: list[dict] = []
    for video, obs in group_by_video(observations).items():
        samples, boxes = run_tracker(obs, _TRACKER[spec.name], spec.tracker)
        if spec.name.startswith("llm_"):
            samples = refine_series(obs, client, spec.refinement, audit=audit,
                                    image_refs=(images or {}).get(video))
        elif spec.name != "detector_only":
            tracks[video] = boxes
        series.extend(samples)
    return series, tracks, audit


def _client_for(spec: PipelineSpec) -> LLMClient | None:
    if not spec.name.startswith("llm_"):
        return None
    return load_mock(spec.mock) if spec.mock else client_from_config(spec.refinement)


def run_pipeline(spec: PipelineSpec, inputs: PipelineInputs, runs_root: str | os.PathLike = "runs",
                 run_id: str | None = None, client: LLMClient | None = None) -> RunOutcome:
    paths = inputs.paths()
    digests = {key: file_digest(p) for key, p in paths.items()}
    run_id = run_id or default_run_id(spec, digests)
    run_dir = Path(runs_root) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "run_id": run_id,
        "tool_version": __version__,
        "inputs": {key: {"path": os.path.abspath(p), "sha256": digests[key]} for key, p in paths.items()},
        "config": spec.to_dict(),
        "artifacts": {},
        "status": "running",
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    _write_json(run_dir / "manifest.json", manifest)

    try:
        with open(inputs.detections) as fh:
            observations = parse_detection_log(fh, spec.conf_threshold)
        series, tracks, audit = measure(spec, observations, client or _client_for(spec), inputs.images)

        with open(run_dir / "series.csv", "w", newline="") as fh:
            write_series(series, fh)
        with open(run_dir / "refine_audit.jsonl", "w") as fh:
            write_audit(audit, fh)
        manifest["artifacts"].update(series="series.csv", refine_audit="refine_audit.jsonl")

        report = None
        if inputs.ground_truth:
            report = _evaluate(inputs, series, tracks)
            with open(run_dir / "metrics.json", "w") as fh:
                write_report_json(report, fh)
            manifest["artifacts"]["metrics"] = "metrics.json"

        if inputs.weather and inputs.sim_config:
            _simulate(spec, inputs, series, run_dir)
            manifest["artifacts"].update(steps="steps.csv", steps_baseline="steps_baseline.csv",
                                         summary="summary.json", charts=["monthly_energy.svg", "monthly_ppd.svg"])
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        _write_json(run_dir / "manifest.json", manifest)
        raise

    manifest["status"] = "ok"
    manifest["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    _write_json(run_dir / "manifest.json", manifest)
    return RunOutcome(series, report, manifest, run_dir)


def _evaluate(inputs: PipelineInputs, series, tracks) -> MetricsReport:
    with open(inputs.ground_truth) as fh:
        gt = parse_ground_truth(fh)
    identity = {}
    for video, path in inputs.identity.items():
        with open(path) as fh:
            identity.update(parse_identity_ground_truth(fh, video))
    return evaluate(gt, series, identity or None, tracks or None)


def _simulate(spec: PipelineSpec, inputs: PipelineInputs, series, run_dir: Path) -> None:
    with open(inputs.weather) as fh:
        weather = parse_weather(fh)
    with open(inputs.sim_config) as fh:
        model, cfg, comfort = load_sim_config(fh)
    ordered = sorted(series, key=lambda s: s.timestamp)
    intervals = aggregate(ordered, spec.interval, spec.reducer)
    if spec.annual_year is not None:
        intervals = tile_annual_profile(day_profiles(intervals, spec.interval), spec.annual_year, spec.interval)
    base = simulate(intervals, weather, model, "baseline", cfg, comfort)
    occ = simulate(intervals, weather, model, "mpc", cfg, comfort)
    with open(run_dir / "steps.csv", "w", newline="") as fh:
        write_steps(occ.steps, fh)
    with open(run_dir / "steps_baseline.csv", "w", newline="") as fh:
        write_steps(base.steps, fh)
    with open(run_dir / "summary.json", "w") as fh:
        write_summary({"mpc": summary(occ, base), "baseline": summary(base)}, fh)
    energy, ppd = render_monthly_charts({"baseline": monthly_rollup(base.steps), spec.name: monthly_rollup(occ.steps)})
    (run_dir / "monthly_energy.svg").write_text(energy)
    (run_dir / "monthly_ppd.svg").write_text(ppd)


def load_manifest(run_dir: str | os.PathLike) -> dict:
    with open(Path(run_dir) / "manifest.json") as fh:
        return json.load(fh)


def rerun(manifest_path: str | os.PathLike, runs_root: str | os.PathLike) -> RunOutcome:
    """Re-execute a run from its manifest after checking the inputs are unchanged."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    recorded = manifest["inputs"]
    for key, entry in recorded.items():
        if file_digest(entry["path"]) != entry["sha256"]:
            raise PipelineError(f"input {key} ({entry['path']}) changed since the run was recorded")
    identity = {k.split(":", 1)[1]: v["path"] for k, v in recorded.items() if k.startswith("identity:")}
    inputs = PipelineInputs(
        detections=recorded["detections"]["path"],
        ground_truth=recorded.get("ground_truth", {}).get("path"),
        identity=identity,
        weather=recorded.get("weather", {}).get("path"),
        sim_config=recorded.get("sim_config", {}).get("path"),
    )
    return run_pipeline(PipelineSpec.from_dict(manifest["config"]), inputs, runs_root, manifest["run_id"])


# --------------------------------------------------------------------------- #
# comparison

COMPARE_COLUMNS = ["n_frames", "mae", "rmse", "exact_accuracy", "accuracy", "precision", "recall", "f1", "fn", "fp"]
_LOWER_IS_BETTER = {"mae", "rmse", "fn", "fp"}


def compare_runs(run_ids: Sequence[str], runs_root: str | os.PathLike = "runs") -> list[dict]:
    """Side-by-side metrics rows; ``best`` lists the columns where a run is best."""
    rows, gt_digest = [], None
    for rid in run_ids:
        run_dir = Path(runs_root) / rid
        manifest = load_manifest(run_dir)
        digest = manifest["inputs"].get("ground_truth", {}).get("sha256")
        if digest is None:
            raise PipelineError(f"run {rid} was not evaluated against ground truth")
        if gt_digest is not None and digest != gt_digest:
            raise PipelineError(f"run {rid} used different ground truth than {run_ids[0]}")
        gt_digest = digest
        with open(run_dir / "metrics.json") as fh:
            m = json.load(fh)
        rows.append({
            "run": rid, "pipeline": manifest["config"]["name"], "n_frames": m["n_frames"],
            "mae": m["mae"], "rmse": m["rmse"], "exact_accuracy": m["exact_accuracy"],
            "accuracy": m["accuracy"], "precision": m["precision"], "recall": m["recall"], "f1": m["f1"],
            "fn": m["confusion"]["fn"], "fp": m["confusion"]["fp"],
            "id_switches": m.get("id_switches"), "fragmentation": m.get("fragmentation"),
        })
    for col in COMPARE_COLUMNS[1:]:
        values = [r[col] for r in rows]
        target = min(values) if col in _LOWER_IS_BETTER else max(values)
        for r in rows:
            if r[col] == target:
                r.setdefault("best", []).append(col)
    for r in rows:
        r.setdefault("best", [])
    return rows


def write_comparison(rows: Sequence[dict], stream) -> None:
    cols = ["run", "pipeline"] + COMPARE_COLUMNS + ["id_switches", "fragmentation", "best"]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(cols)
    for r in rows:
        writer.writerow([("" if r[c] is None else ";".join(r[c]) if c == "best" else r[c]) for c in cols])
