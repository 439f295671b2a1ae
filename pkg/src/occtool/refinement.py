"""LLM-based refinement of detector occupancy counts with confidence-gated fusion.

Uncertain frames are screened out of the detector series, sent in small
batches to an LLM endpoint, and the returned counts replace the detector
count only when the LLM is confident enough by a fixed margin. Any failure
(transport, timeout, malformed JSON) leaves the detector values in place.
"""
from __future__ import annotations

import base64
import json
import logging
import math
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Iterable, Mapping, Protocol, Sequence

import requests

from .ingest import FrameObservation
from .samples import OccupancySample

log = logging.getLogger(__name__)

REASONS = ("low_conf", "boundary", "spike")

FRAMES_BEGIN = "<<FRAMES>>"
FRAMES_END = "<<END FRAMES>>"


class LLMError(RuntimeError):
    """Transport-level failure talking to the LLM endpoint."""


class LLMResponseError(ValueError):
    """The LLM answered, but not with the strict JSON contract."""


@dataclass(frozen=True)
class RefinementConfig:
    margin: float = 0.15
    low_conf_bound: float = 0.6
    spike_excess: int = 2
    batch_size: int = 8
    mode: str = "text_only"
    endpoint: str | None = None
    model: str = "deepseek"
    timeout: float = 30.0
    retries: int = 1
    max_in_flight: int = 2

    def __post_init__(self):
        if not self.margin > 0:
            raise ValueError("fusion margin must be positive")
        if self.batch_size < 1 or self.max_in_flight < 1 or self.retries < 0:
            raise ValueError("batch_size >= 1, max_in_flight >= 1, retries >= 0 required")
        if self.mode not in ("text_only", "vision"):
            raise ValueError(f"unknown refinement mode {self.mode!r}")


@dataclass(frozen=True)
class ReviewItem:
    video_id: str
    frame_idx: int
    timestamp: float
    count: int
    mean_conf: float
    prev_count: int
    next_count: int
    reason: str
    image_ref: str | None = None


@dataclass(frozen=True)
class RefinementResponse:
    frame_idx: int
    count: int
    confidence: float

    def __post_init__(self):
        if self.count < 0 or not 0.0 <= self.confidence <= 1.0:
            raise ValueError("LLM count must be >= 0 and confidence within [0, 1]")


# --------------------------------------------------------------------------- #
# screening

def _reason(count: int, conf: float, prev: int, nxt: int, cfg: RefinementConfig) -> str | None:
    if conf < cfg.low_conf_bound and count > 0:
        return "low_conf"
    if count in (0, 1):
        return "boundary"
    if count > max(prev, nxt) + cfg.spike_excess:
        return "spike"
    return None


def select_frames_for_review(
    observations: Sequence[FrameObservation],
    cfg: RefinementConfig | None = None,
    counts: Sequence[int] | None = None,
    image_refs: Mapping[int, str] | None = None,
) -> list[ReviewItem]:
    """Flag frames for LLM review; the first matching rule names the reason.

    ``counts`` overrides the detector counts (e.g. to review a tracker series);
    neighbours outside the sequence count as 0.
    """
    cfg = cfg or RefinementConfig()
    values = list(counts) if counts is not None else [o.count for o in observations]
    if len(values) != len(observations):
        raise ValueError("counts must align with observations")
    image_refs = image_refs or {}
    items = []
    for i, obs in enumerate(observations):
        prev = values[i - 1] if i > 0 else 0
        nxt = values[i + 1] if i + 1 < len(values) else 0
        reason = _reason(values[i], obs.mean_conf, prev, nxt, cfg)
        if reason is not None:
            items.append(ReviewItem(obs.video_id, obs.frame_idx, obs.timestamp, values[i],
                                    obs.mean_conf, prev, nxt, reason, image_refs.get(obs.frame_idx)))
    return items


def make_batches(items: Sequence[ReviewItem], batch_size: int) -> list[list[ReviewItem]]:
    return [list(items[i:i + batch_size]) for i in range(0, len(items), batch_size)]


# --------------------------------------------------------------------------- #
# prompting and strict parsing

_RULES = """You are refining indoor occupancy counts produced by a person detector.
Rules:
- Count only humans physically present in the room. Ignore people on screens,
  posters, reflections, or outside the room boundary.
- Use the neighbouring frame counts as temporal context; implausible one-frame
  jumps are usually detector errors.
- When uncertain, prefer the more conservative (lower) count and report a lower confidence.
- Respond with JSON only: no prose, no markdown, no explanation."""


def _frame_record(item: ReviewItem) -> dict[str, Any]:
    return {
        "frame": item.frame_idx,
        "timestamp": item.timestamp,
        "detector_count": item.count,
        "mean_confidence": round(item.mean_conf, 6),
        "prev_count": item.prev_count,
        "next_count": item.next_count,
        "reason": item.reason,
    }


def build_prompt(batch: Sequence[ReviewItem], mode: str = "text_only") -> str:
    if not batch:
        raise ValueError("cannot build a prompt for an empty batch")
    lines = [_RULES, ""]
    if mode == "vision":
        lines.append("One image is attached per frame, in the order listed below:")
        lines.extend(f"- frame {it.frame_idx}: {it.image_ref}" for it in batch if it.image_ref)
        lines.append("")
    lines.append(f"Frames to review ({len(batch)}):")
    lines.append(FRAMES_BEGIN)
    lines.extend(json.dumps(_frame_record(it), sort_keys=True) for it in batch)
    lines.append(FRAMES_END)
    lines.append("")
    lines.append(
        f"Return a JSON array with exactly {len(batch)} elements, one per frame above, each "
        'of the form {"frame": <int>, "count": <int >= 0>, "confidence": <float in [0, 1]>}.'
    )
    return "\n".join(lines)


def prompt_frames(prompt: str) -> list[dict[str, Any]]:
    """Recover the per-frame records embedded in a prompt built by :func:`build_prompt`."""
    m = re.search(re.escape(FRAMES_BEGIN) + r"\n(.*?)\n" + re.escape(FRAMES_END), prompt, re.S)
    if not m:
        return []
    return [json.loads(line) for line in m.group(1).splitlines() if line.strip()]


def _as_count(value: Any) -> int:
    if isinstance(value, bool):
        raise LLMResponseError("count must be numeric")
    if isinstance(value, int):
        n = value
    elif isinstance(value, float) and math.isfinite(value) and value == int(value):
        n = int(value)
    else:
        raise LLMResponseError(f"count {value!r} is not an integer")
    if n < 0:
        raise LLMResponseError(f"negative count {n}")
    return n


def parse_llm_response(raw: str, expected_frames: Iterable[int]) -> list[RefinementResponse]:
    """Strictly parse an LLM answer; anything off-contract raises LLMResponseError."""
    expected = set(expected_frames)
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, TypeError) as exc:
        raise LLMResponseError(f"response is not JSON: {exc}") from None
    if not isinstance(data, list):
        raise LLMResponseError("response must be a JSON array")
    out, seen = [], set()
    for el in data:
        if not isinstance(el, dict) or not {"frame", "count", "confidence"} <= el.keys():
            raise LLMResponseError(f"element {el!r} lacks frame/count/confidence")
        frame = el["frame"]
        if isinstance(frame, bool) or not isinstance(frame, int) or frame not in expected:
            raise LLMResponseError(f"unexpected frame {frame!r}")
        if frame in seen:
            raise LLMResponseError(f"duplicate frame {frame}")
        seen.add(frame)
        conf = el["confidence"]
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not math.isfinite(conf):
            raise LLMResponseError(f"confidence {conf!r} is not a number")
        out.append(RefinementResponse(frame, _as_count(el["count"]), min(1.0, max(0.0, float(conf)))))
    return out


def fuse(count: int, mean_conf: float, response: RefinementResponse | None, margin: float = 0.15) -> tuple[int, float]:
    if response is not None and response.confidence >= mean_conf + margin:
        return response.count, response.confidence
    return count, mean_conf


# --------------------------------------------------------------------------- #
# clients

class LLMClient(Protocol):
    def complete(self, prompt: str, images: Sequence[str] | None = None) -> str: ...


class HttpLLMClient:
    """POSTs ``{"model", "prompt", "images"?}`` and returns the ``text`` field of the reply."""

    def __init__(self, url: str, model: str = "deepseek", timeout: float = 30.0, retries: int = 1,
                 session: requests.Session | None = None):
        self.url = url
        self.model = model
        self.timeout = timeout
        self.retries = retries
        self.session = session or requests.Session()

    def complete(self, prompt: str, images: Sequence[str] | None = None) -> str:
        body: dict[str, Any] = {"model": self.model, "prompt": prompt}
        if images:
            body["images"] = list(images)
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self.session.post(self.url, json=body, timeout=self.timeout)
                resp.raise_for_status()
                text = resp.json()["text"]
                if not isinstance(text, str):
                    raise LLMError("reply field 'text' is not a string")
                return text
            except (requests.RequestException, ValueError, KeyError, LLMError) as exc:
                last = exc
                log.warning("LLM call to %s failed (attempt %d/%d): %s",
                            self.url, attempt + 1, self.retries + 1, exc)
        raise LLMError(f"LLM endpoint {self.url} failed after {self.retries + 1} attempts: {last}")


def _mock_reply(behavior: str | Mapping, frames: Sequence[Mapping[str, Any]], fixed=(1, 1.0)) -> str:
    if behavior == "fail":
        raise LLMError("mock endpoint configured to fail")
    if behavior == "echo":
        return json.dumps([{"frame": f["frame"], "count": f["detector_count"], "confidence": 1.0}
                           for f in frames])
    if behavior == "fixed":
        return json.dumps([{"frame": f["frame"], "count": fixed[0], "confidence": fixed[1]}
                           for f in frames])
    if isinstance(behavior, Mapping):
        out = []
        for f in frames:
            entry = behavior.get(str(f["frame"]), behavior.get(f["frame"]))
            if entry is None:
                continue
            if entry == "fail":
                raise LLMError(f"scripted failure for frame {f['frame']}")
            if isinstance(entry, str):  # scripted raw text, e.g. to exercise the strict parser
                return entry
            out.append({"frame": f["frame"], "count": entry["count"], "confidence": entry["confidence"]})
        return json.dumps(out)
    raise ValueError(f"unknown mock behavior {behavior!r}")


@dataclass
class MockLLMClient:
    """Deterministic in-process stand-in for an LLM endpoint.

    ``behavior`` is ``"echo"`` (detector counts, confidence 1), ``"fail"``,
    ``"fixed"`` (``fixed_count``/``fixed_confidence`` everywhere) or a mapping
    from frame index to ``{"count", "confidence"}``, ``"fail"`` or a raw reply string.
    """

    behavior: str | Mapping = "echo"
    fixed_count: int = 1
    fixed_confidence: float = 1.0
    calls: list[str] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def complete(self, prompt: str, images: Sequence[str] | None = None) -> str:
        with self._lock:
            self.calls.append(prompt)
        return _mock_reply(self.behavior, prompt_frames(prompt), (self.fixed_count, self.fixed_confidence))


def load_mock(spec: str) -> MockLLMClient:
    """``echo``, ``fail``, ``fixed:<count>:<conf>`` or a path to a per-frame JSON script."""
    if spec in ("echo", "fail"):
        return MockLLMClient(spec)
    if spec.startswith("fixed:"):
        _, n, s = spec.split(":")
        return MockLLMClient("fixed", int(n), float(s))
    with open(spec) as fh:
        return MockLLMClient(json.load(fh))


class _MockHandler(BaseHTTPRequestHandler):
    client: MockLLMClient

    def do_POST(self):  # noqa: N802
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length))
            text = self.client.complete(body["prompt"], body.get("images"))
        except LLMError as exc:
            self._reply(503, {"error": str(exc)})
            return
        except (ValueError, KeyError) as exc:
            self._reply(400, {"error": str(exc)})
            return
        self._reply(200, {"text": text})

    def _reply(self, status: int, payload: dict) -> None:
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, fmt, *args):
        log.debug("mock llm: " + fmt, *args)


def serve_mock(client: MockLLMClient, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start the HTTP mock in a daemon thread; ``server.server_address`` gives the bound port."""
    handler = type("MockHandler", (_MockHandler,), {"client": client})
    server = ThreadingHTTPServer((host, port), handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def client_from_config(cfg: RefinementConfig) -> HttpLLMClient:
    url = cfg.endpoint or os.environ.get("OCCTOOL_LLM_URL")
    if not url:
        raise ValueError("no LLM endpoint configured (set endpoint or OCCTOOL_LLM_URL)")
    return HttpLLMClient(url, cfg.model, cfg.timeout, cfg.retries)


# --------------------------------------------------------------------------- #
# series refinement

def _encode_image(ref: str) -> str:
    with open(ref, "rb") as fh:
        return base64.b64encode(fh.read()).decode("ascii")


def _run_batch(batch: list[ReviewItem], client: LLMClient, cfg: RefinementConfig):
    images = None
    if cfg.mode == "vision":
        images = [_encode_image(it.image_ref) for it in batch if it.image_ref and os.path.exists(it.image_ref)]
    prompt = build_prompt(batch, cfg.mode)
    try:
        raw = client.complete(prompt, images or None)
        return {r.frame_idx: r for r in parse_llm_response(raw, [it.frame_idx for it in batch])}, None
    except (LLMError, LLMResponseError) as exc:
        return {}, str(exc)


def refine_series(
    observations: Sequence[FrameObservation],
    client: LLMClient,
    cfg: RefinementConfig | None = None,
    base: Sequence[OccupancySample] | None = None,
    audit: list[dict] | None = None,
    image_refs: Mapping[int, str] | None = None,
) -> list[OccupancySample]:
    """Refine one video's occupancy series through the LLM and the fusion rule.

    ``base`` supplies the counts to refine (defaults to the detector counts);
    confidences always come from the detector. Frames that are not reviewed,
    or whose batch failed, keep their input count and confidence.
    """
    cfg = cfg or RefinementConfig()
    if base is not None:
        if [s.frame_idx for s in base] != [o.frame_idx for o in observations]:
            raise ValueError("base series must align frame-by-frame with the observations")
        counts = [s.count for s in base]
    else:
        counts = [o.count for o in observations]

    items = select_frames_for_review(observations, cfg, counts, image_refs)
    batches = make_batches(items, cfg.batch_size)
    with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
        results = list(pool.map(lambda b: _run_batch(b, client, cfg), batches))

    decided: dict[int, tuple[int, float]] = {}
    entries: list[dict] = []
    for batch, (responses, error) in zip(batches, results):
        if error is not None:
            log.warning("refinement batch for video %s frames %d-%d fell back to detector: %s",
                        batch[0].video_id, batch[0].frame_idx, batch[-1].frame_idx, error)
        for it in batch:
            resp = responses.get(it.frame_idx)
            fused = fuse(it.count, it.mean_conf, resp, cfg.margin)
            accepted = resp is not None and resp.confidence >= it.mean_conf + cfg.margin
            decided[it.frame_idx] = fused
            entry = {
                "video": it.video_id, "frame": it.frame_idx, "reason": it.reason,
                "c_t": it.count, "s_bar_t": it.mean_conf,
                "c_llm": resp.count if resp else None, "s_llm": resp.confidence if resp else None,
                "accepted": accepted,
            }
            if error is not None:
                entry["error"] = error
            elif resp is None:
                entry["error"] = "frame missing from LLM response"
            entries.append(entry)
    if audit is not None:
        audit.extend(sorted(entries, key=lambda e: e["frame"]))

    out = []
    for obs, c in zip(observations, counts):
        count, conf = decided.get(obs.frame_idx, (c, obs.mean_conf))
        out.append(OccupancySample(obs.video_id, obs.frame_idx, obs.timestamp, count, conf, "llm_fused"))
    return out


def write_audit(entries: Iterable[dict], stream) -> None:
    for e in entries:
        stream.write(json.dumps(e, sort_keys=True) + "\n")
