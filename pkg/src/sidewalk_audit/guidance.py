"""Per-segment mission guidance: trigger rules, prompt composition, VLM clients, caching."""

from __future__ import annotations

import base64
import json
import logging
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence, TextIO

from .clients import get_json
from .errors import ClientError, SchemaError, ValidationError
from .labels import Taxonomy, default_taxonomy
from .road_graph import RoadType

log = logging.getLogger(__name__)

MAX_MESSAGE_CHARS = 600
DEFAULT_MODEL_ID = "gemini-2.5-flash"
MOCK_MODEL_ID = "mock"


class EventKind(str, Enum):
    MISSION_START = "MissionStart"
    SEGMENT_CHANGE = "SegmentChange"
    JUMP = "Jump"


@dataclass(frozen=True)
class SessionEvent:
    kind: EventKind
    segment_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EventKind(self.kind))


@dataclass(frozen=True)
class PanoramaRef:
    """Panorama id plus an opaque image handle (file path or URL) for the live adapter."""

    pano_id: str
    image: str = ""


@dataclass(frozen=True)
class GuidanceRequest:
    segment_id: str
    road_type: RoadType
    start_pano: PanoramaRef
    end_pano: PanoramaRef

    def __post_init__(self) -> None:
        object.__setattr__(self, "road_type", RoadType(self.road_type))
        if not (self.start_pano and self.start_pano.pano_id and self.end_pano and self.end_pano.pano_id):
            raise ValidationError(f"segment {self.segment_id!r}: both boundary panoramas are required")


@dataclass(frozen=True)
class GuidanceMessage:
    segment_id: str
    text: str
    generated_at: datetime
    model_id: str
    road_type: RoadType = RoadType.OTHER
    degraded: bool = False

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError("guidance text is empty")
        if len(self.text) > MAX_MESSAGE_CHARS:
            raise ValidationError(f"guidance text exceeds {MAX_MESSAGE_CHARS} characters")

    def log_record(self) -> dict[str, Any]:
        return {"segment_id": self.segment_id, "road_type": self.road_type.value, "text": self.text,
                "degraded": self.degraded, "model_id": self.model_id}


class GuidanceSession:
    """Tracks the annotator's current segment and decides when guidance fires.

    Every event kind fires when it lands on a segment other than the current
    one (a fresh session has no current segment), so guidance never repeats
    for the segment already on screen.
    """

    def __init__(self, segments: Iterable[str]) -> None:
        self.segments = frozenset(segments)
        self.current: str | None = None

    def should_trigger(self, event: SessionEvent) -> bool:
        if event.segment_id not in self.segments:
            raise ValidationError(f"event for unknown segment {event.segment_id!r}")
        fire = event.segment_id != self.current
        self.current = event.segment_id
        return fire


ROAD_EMPHASIS: Mapping[RoadType, str] = {
    RoadType.RESIDENTIAL: (
        "Residential streets here often have no separate footpath, so treat the road itself as the "
        "pedestrian path. Emphasize obstacles and surface problems on the carriageway and its edges; "
        "check curb ramps only at visible crosswalks or intersections."
    ),
    RoadType.TERTIARY: (
        "Roads of this class usually have a constructed sidewalk on at least one side. Focus on the paved "
        "walkway for surface problems and obstacles, and prioritize checking for missing curb ramps and "
        "crosswalk condition at intersections."
    ),
    RoadType.SECONDARY: (
        "Roads of this class should have a proper sidewalk along the edges, so prioritize checking for missing "
        "curb ramps and crosswalk condition at intersections and where the footpath meets the road, then note "
        "obstacles blocking the walkway."
    ),
    RoadType.PRIMARY: (
        "Arterial roads should have raised walking space, curbs and marked crossings, so prioritize checking for "
        "missing curb ramps, crosswalk markings and pedestrian signals, then note obstacles on the footpath."
    ),
    RoadType.OTHER: (
        "The road class is unknown. First decide whether a usable footpath exists, then look for obstacles, "
        "surface problems and curb transitions."
    ),
}

FALLBACK_MESSAGES: Mapping[RoadType, str] = {
    RoadType.RESIDENTIAL: "Walk the road edge as the pedestrian path and label obstacles and surface problems; "
                          "check curbs only at crossings.",
    RoadType.TERTIARY: "Expect a sidewalk on at least one side: label surface problems and obstacles on it, "
                       "and check curb style at intersections.",
    RoadType.SECONDARY: "Expect a sidewalk on both edges: check for missing curb ramps and crosswalks at "
                        "intersections, then obstacles.",
    RoadType.PRIMARY: "Check curb ramps, crosswalks and pedestrian signals at every crossing, then obstacles "
                      "on the footpath.",
    RoadType.OTHER: "Decide whether a footpath exists, then label obstacles, surface problems and curb "
                    "transitions.",
}


def build_prompt(req: GuidanceRequest, taxonomy: Taxonomy | None = None) -> str:
    """Structured prompt for one segment.

    Depends only on the road type and the taxonomy; the two panoramas travel
    as images alongside the prompt.
    """
    taxonomy = taxonomy or default_taxonomy()
    vocab = "\n".join(
        f"- {lt.display} ({lt.polarity.value}): {', '.join(sorted(lt.allowed_tags))}" for lt in taxonomy
    )
    return (
        "You are helping a volunteer audit sidewalk accessibility from street-level imagery in an Indian city.\n"
        "Two panoramas are attached: the first and last views along the current street segment.\n"
        f"Road type: {req.road_type.value}\n"
        f"Guidance focus: {ROAD_EMPHASIS[req.road_type]}\n"
        f"Label vocabulary (taxonomy {taxonomy.version or 'unversioned'}):\n{vocab}\n"
        "Write practical annotation advice for this segment that names the labels most likely to apply "
        "and what to look for in the imagery. Do not invent labels outside the vocabulary. "
        "Answer in at most 3 sentences."
    )


class VlmClient(Protocol):
    def generate(self, prompt: str, images: Sequence[PanoramaRef]) -> str:
        ...


_ROAD_LINE = re.compile(r"^Road type: (\w+)$", re.MULTILINE)


class MockVlmClient:
    """Deterministic stand-in for a VLM.

    ``reply`` may be a fixed string, a callable ``(prompt, images) -> str``,
    or None for a canned message keyed on the prompt's road type.
    """

    def __init__(self, reply: str | Callable[[str, Sequence[PanoramaRef]], str] | None = None) -> None:
        self.reply = reply
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, prompt: str, images: Sequence[PanoramaRef]) -> str:
        with self._lock:
            self.calls += 1
        if callable(self.reply):
            return self.reply(prompt, images)
        if self.reply is not None:
            return self.reply
        m = _ROAD_LINE.search(prompt)
        road = RoadType(m.group(1)) if m else RoadType.OTHER
        return f"[mock] {FALLBACK_MESSAGES[road]}"


class GeminiClient:
    """Live adapter for the Gemini generateContent endpoint.

    The API key comes from ``GEMINI_API_KEY``; panorama handles are read as
    local JPEG files and sent inline.
    """

    ENDPOINT = "https://generativelanguage.googleapis.com/v1beta/models/{model}:generateContent"

    def __init__(self, model_id: str = DEFAULT_MODEL_ID, endpoint: str | None = None,
                 api_key: str | None = None, timeout: float = 60.0) -> None:
        self.model_id = model_id
        self.endpoint = endpoint or self.ENDPOINT
        self.api_key = api_key or os.environ.get("GEMINI_API_KEY")
        self.timeout = timeout

    def build_payload(self, prompt: str, images: Sequence[PanoramaRef]) -> dict[str, Any]:
        parts: list[dict[str, Any]] = [{"text": prompt}]
        for ref in images:
            if not ref.image:
                continue
            data = base64.b64encode(Path(ref.image).read_bytes()).decode("ascii")
            parts.append({"inline_data": {"mime_type": "image/jpeg", "data": data}})
        return {"contents": [{"parts": parts}]}

    def generate(self, prompt: str, images: Sequence[PanoramaRef]) -> str:
        if not self.api_key:
            raise ClientError("GEMINI_API_KEY is not set")
        doc = get_json(self.endpoint.format(model=self.model_id), body=self.build_payload(prompt, images),
                       headers={"x-goog-api-key": self.api_key}, timeout=self.timeout)
        try:
            parts = doc["candidates"][0]["content"]["parts"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError("unexpected Gemini response shape") from exc
        return "".join(p.get("text", "") for p in parts).strip()


_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def truncate_message(text: str, limit: int = MAX_MESSAGE_CHARS) -> str:
    """Cut ``text`` to at most ``limit`` characters, preferring a sentence boundary."""
    text = text.strip()
    if len(text) <= limit:
        return text
    head = text[:limit]
    ends = [m.end() for m in _SENTENCE_END.finditer(head)]
    if ends:
        return head[:ends[-1]].strip()
    cut = head.rfind(" ")
    return (head[:cut] if cut > 0 else head).strip()


def generate_guidance(
    client: VlmClient,
    req: GuidanceRequest,
    taxonomy: Taxonomy | None = None,
    model_id: str = DEFAULT_MODEL_ID,
    clock: Callable[[], datetime] | None = None,
) -> GuidanceMessage:
    """One uncached guidance call; falls back to a static road-type message on failure."""
    now = (clock or (lambda: datetime.now(timezone.utc)))()
    try:
        text = truncate_message(client.generate(build_prompt(req, taxonomy), [req.start_pano, req.end_pano]))
        if not text:
            raise ClientError("empty guidance text")
    except Exception as exc:  # noqa: BLE001 - any client fault degrades to the static message
        log.warning("guidance for segment %s degraded: %s", req.segment_id, exc)
        return GuidanceMessage(req.segment_id, FALLBACK_MESSAGES[req.road_type], now, model_id,
                               req.road_type, degraded=True)
    return GuidanceMessage(req.segment_id, text, now, model_id, req.road_type)


class GuidanceService:
    """Caches guidance per segment so repeat visits never call the model again.

    Degraded fallbacks are cached too.  The cache has no expiry.
    """

    def __init__(self, client: VlmClient, taxonomy: Taxonomy | None = None, model_id: str = DEFAULT_MODEL_ID,
                 clock: Callable[[], datetime] | None = None) -> None:
        self.client = client
        self.taxonomy = taxonomy
        self.model_id = model_id
        self.clock = clock
        self.cache: dict[str, GuidanceMessage] = {}
        self._lock = threading.Lock()

    def generate_guidance(self, req: GuidanceRequest) -> GuidanceMessage:
        with self._lock:
            hit = self.cache.get(req.segment_id)
        if hit is not None:
            return hit
        msg = generate_guidance(self.client, req, self.taxonomy, self.model_id, self.clock)
        with self._lock:
            return self.cache.setdefault(req.segment_id, msg)


def run_session(
    events: Iterable[SessionEvent],
    requests: Mapping[str, GuidanceRequest],
    service: GuidanceService,
) -> list[GuidanceMessage]:
    """Replay an annotation session, returning the guidance shown at each trigger."""
    session = GuidanceSession(requests)
    shown = []
    for ev in events:
        if session.should_trigger(ev):
            shown.append(service.generate_guidance(requests[ev.segment_id]))
    return shown


def read_events(fh: TextIO) -> list[SessionEvent]:
    """JSON-lines of ``{"kind": ..., "segment_id": ...}``."""
    out = []
    for n, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            out.append(SessionEvent(EventKind(doc["kind"]), str(doc["segment_id"])))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise SchemaError(f"event log line {n}: {exc}") from exc
    return out


def write_guidance_log(messages: Iterable[GuidanceMessage], fh: TextIO) -> None:
    for msg in messages:
        fh.write(json.dumps(msg.log_record(), sort_keys=True) + "\n")
