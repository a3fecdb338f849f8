"""POI extraction: sample query points, fetch from a places provider, dedup, categorize, count."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from collections import defaultdict
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence, TextIO

from .clients import TokenBucket, bounded_map, call_with_retries, get_json
from .errors import ClientError, QuotaExceededError, SchemaError, TransientClientError, ValidationError
from .geo import GeoPoint, LocalProjection, ZonePolygon, make_grid

log = logging.getLogger(__name__)

CATEGORIES = (
    "Financial services", "Education", "Healthcare", "Public service", "Transport",
    "Food", "Religious", "Utilities", "Commercial", "Social",
)
UNCATEGORIZED = "Uncategorized"
UNASSIGNED = "unassigned"

DEFAULT_QUERY_RADIUS_M = 400.0
DEFAULT_SAMPLE_SPACING_M = 400.0
DEDUP_DECIMALS = 6

POI_COLUMNS = ("provider_id", "lat", "lon", "raw_types", "category", "sector_id")


@dataclass(frozen=True)
class PoiRecord:
    provider_id: str
    location: GeoPoint
    raw_types: tuple[str, ...]
    category: str = UNCATEGORIZED
    sector_id: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "raw_types", tuple(self.raw_types))
        if not self.raw_types:
            raise ValidationError(f"POI {self.provider_id!r} has no provider types")
        if self.category not in CATEGORIES and self.category != UNCATEGORIZED:
            raise ValidationError(f"POI {self.provider_id!r}: unknown category {self.category!r}")


@dataclass(frozen=True)
class PlacesQuery:
    center: GeoPoint
    radius: float = DEFAULT_QUERY_RADIUS_M

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValidationError(f"query radius must be positive, got {self.radius}")


class PoiTaxonomy:
    """Provider type -> category lookup built from a category -> [types] table."""

    def __init__(self, table: Mapping[str, Sequence[str]]) -> None:
        self.table = {cat: list(types) for cat, types in table.items()}
        self.index: dict[str, str] = {}
        for cat, types in self.table.items():
            if cat not in CATEGORIES:
                raise SchemaError(f"unknown POI category {cat!r}")
            for t in types:
                if t in self.index:
                    raise SchemaError(f"type {t!r} listed under both {self.index[t]!r} and {cat!r}")
                self.index[t] = cat

    def category_of(self, raw_type: str) -> str | None:
        return self.index.get(raw_type)


def load_poi_taxonomy(path: str | Path | None = None) -> PoiTaxonomy:
    if path is None:
        text = resources.files("sidewalk_audit.data").joinpath("poi_taxonomy.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return PoiTaxonomy(json.loads(text))


@lru_cache(maxsize=1)
def default_poi_taxonomy() -> PoiTaxonomy:
    return load_poi_taxonomy()


def categorize(record: PoiRecord, taxonomy: PoiTaxonomy | None = None) -> PoiRecord:
    """Category of the first provider type found in the taxonomy, else Uncategorized."""
    taxonomy = taxonomy or default_poi_taxonomy()
    for t in record.raw_types:
        cat = taxonomy.category_of(t)
        if cat is not None:
            return replace(record, category=cat)
    return replace(record, category=UNCATEGORIZED)


def dedup(records: Iterable[PoiRecord], decimals: int = DEDUP_DECIMALS) -> list[PoiRecord]:
    """Keep the first record per coordinate rounded to ``decimals`` places."""
    seen: set[tuple[float, float]] = set()
    out = []
    for r in records:
        key = (round(r.location.lat, decimals), round(r.location.lon, decimals))
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


def sample_points(sector: ZonePolygon, spacing: float = DEFAULT_SAMPLE_SPACING_M) -> list[GeoPoint]:
    """Centroids of a ``spacing``-meter grid over the sector that fall inside it.

    A sector too thin to contain any centroid still yields one interior point.
    """
    if not spacing > 0:
        raise ValidationError(f"spacing must be positive, got {spacing}")
    proj = LocalProjection.centered_on(sector.ring)
    if proj.polygon(sector.ring).area <= 0:
        raise ValidationError(f"sector {sector.id!r} is degenerate")
    cells = make_grid(sector.bbox, spacing, band=None)
    points = [c.centroid for c in cells if sector.contains(c.centroid)]
    if not points:
        rep = sector.shape.representative_point()
        points = [GeoPoint(rep.y, rep.x)]
    return points


class PlacesClient(Protocol):
    def nearby(self, center: GeoPoint, radius: float) -> Mapping[str, Any]:
        """Raw provider payload for one nearby search."""


def _parse_result(item: Mapping[str, Any]) -> PoiRecord | None:
    loc = (item.get("geometry") or {}).get("location") or {}
    types = tuple(item.get("types") or ())
    pid = item.get("place_id")
    if pid is None or "lat" not in loc or "lng" not in loc or not types:
        log.warning("skipping malformed places result %r", pid)
        return None
    return PoiRecord(str(pid), GeoPoint(float(loc["lat"]), float(loc["lng"])), types)


def parse_places_response(payload: Mapping[str, Any]) -> list[PoiRecord]:
    """Parse a nearby-search payload (Google Places layout)."""
    status = payload.get("status", "OK")
    if status == "ZERO_RESULTS":
        return []
    if status == "OVER_QUERY_LIMIT":
        raise QuotaExceededError("places quota exhausted")
    if status == "UNKNOWN_ERROR":
        raise TransientClientError("places provider reported UNKNOWN_ERROR")
    if status != "OK":
        raise ClientError(f"places provider status {status}: {payload.get('error_message', '')}".strip())
    return [r for r in (_parse_result(i) for i in payload.get("results", [])) if r is not None]


def fetch_pois(client: PlacesClient, q: PlacesQuery) -> list[PoiRecord]:
    """Provider results for one query, verbatim and uncategorized."""
    try:
        return parse_places_response(client.nearby(q.center, q.radius))
    except QuotaExceededError as exc:
        raise QuotaExceededError(f"{exc} (query center {q.center.lat},{q.center.lon} radius {q.radius} m)") from exc


def fetch_many(client: PlacesClient, queries: Sequence[PlacesQuery], workers: int = 1,
               bucket: TokenBucket | None = None, retries: int = 3, backoff: float = 0.5) -> list[list[PoiRecord]]:
    """Run ``fetch_pois`` over ``queries`` with rate limiting and retries; results keep query order."""
    bucket = bucket or TokenBucket(None)

    def one(q: PlacesQuery) -> list[PoiRecord]:
        def attempt() -> list[PoiRecord]:
            bucket.acquire()
            return fetch_pois(client, q)
        return call_with_retries(attempt, retries, backoff)

    return bounded_map(one, queries, workers)


def _query_key(center: GeoPoint, radius: float) -> tuple[float, float, float]:
    return round(center.lat, DEDUP_DECIMALS), round(center.lon, DEDUP_DECIMALS), float(radius)


class FixturePlacesClient:
    """Replays recorded nearby-search payloads keyed by (center, radius).

    Fixture layout: ``{"recordings": [{"center": {"lat", "lon"}, "radius",
    "response"}]}``.  Asking for an unrecorded query is an error.
    """

    def __init__(self, recordings: Iterable[Mapping[str, Any]]) -> None:
        self._by_key: dict[tuple[float, float, float], Mapping[str, Any]] = {}
        for rec in recordings:
            c = rec["center"]
            key = _query_key(GeoPoint(float(c["lat"]), float(c["lon"])), rec.get("radius", DEFAULT_QUERY_RADIUS_M))
            self._by_key[key] = rec["response"]
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> FixturePlacesClient:
        doc = json.loads(Path(path).read_text("utf-8"))
        return cls(doc.get("recordings", []))

    def nearby(self, center: GeoPoint, radius: float) -> Mapping[str, Any]:
        self.calls += 1
        try:
            return self._by_key[_query_key(center, radius)]
        except KeyError:
            raise ClientError(f"no recording for query at {center.lat},{center.lon} radius {radius}") from None


class GooglePlacesClient:
    """Live Places nearby-search adapter; key read from ``GOOGLE_MAPS_API_KEY``."""

    URL = "https://maps.googleapis.com/maps/api/place/nearbysearch/json"

    def __init__(self, api_key: str | None = None, max_pages: int = 3) -> None:
        self.api_key = api_key or os.environ.get("GOOGLE_MAPS_API_KEY")
        if not self.api_key:
            raise ClientError("GOOGLE_MAPS_API_KEY is not set")
        self.max_pages = max_pages

    def nearby(self, center: GeoPoint, radius: float) -> Mapping[str, Any]:
        params: dict[str, Any] = {"location": f"{center.lat},{center.lon}", "radius": radius, "key": self.api_key}
        merged: dict[str, Any] = {"status": "ZERO_RESULTS", "results": []}
        for _ in range(self.max_pages):
            page = get_json(self.URL, params)
            if page.get("status") != "OK":
                return page if not merged["results"] else merged
            merged["status"] = "OK"
            merged["results"].extend(page.get("results", []))
            token = page.get("next_page_token")
            if not token:
                break
            time.sleep(2.0)  # page tokens take a moment to become valid
            params = {"pagetoken": token, "key": self.api_key}
        return merged


def assign_sectors(pois: Iterable[PoiRecord], sectors: Sequence[ZonePolygon]) -> list[PoiRecord]:
    """Tag each POI with the first sector containing it, or leave ``sector_id`` None."""
    out = []
    for p in pois:
        sid = next((s.id for s in sectors if s.contains(p.location)), None)
        out.append(replace(p, sector_id=sid))
    return out


def count_by_category(pois: Iterable[PoiRecord], category: str,
                      sectors: Iterable[str] = ()) -> dict[str, int]:
    """POIs of ``category`` per sector; POIs outside every sector count as ``unassigned``."""
    counts: dict[str, int] = {s: 0 for s in sectors}
    for p in pois:
        if p.category == category:
            key = p.sector_id if p.sector_id is not None else UNASSIGNED
            counts[key] = counts.get(key, 0) + 1
    return counts


def category_table(pois: Iterable[PoiRecord]) -> dict[str, dict[str, int]]:
    """sector -> category -> count over every POI."""
    table: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for p in pois:
        table[p.sector_id if p.sector_id is not None else UNASSIGNED][p.category] += 1
    return {s: dict(c) for s, c in sorted(table.items())}


def select_sector(counts: Mapping[str, int]) -> str:
    """Sector with the highest count (``unassigned`` excluded); ties go to the smallest id."""
    candidates = [(s, n) for s, n in counts.items() if s != UNASSIGNED]
    if not candidates:
        raise ValidationError("no sectors to select from")
    return min(candidates, key=lambda sn: (-sn[1], sn[0]))[0]


def load_reference_counts(path: str | Path | None = None) -> dict[str, int]:
    """Reference commercial POI counts per candidate sector (sector_id, commercial_pois)."""
    if path is None:
        text = resources.files("sidewalk_audit.data").joinpath("commercial_counts.csv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return {row["sector_id"]: int(row["commercial_pois"]) for row in csv.DictReader(text.splitlines())}


def write_pois_csv(pois: Iterable[PoiRecord], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(POI_COLUMNS)
    for p in pois:
        w.writerow([p.provider_id, repr(p.location.lat), repr(p.location.lon), ";".join(p.raw_types),
                    p.category, p.sector_id or ""])


def read_pois_csv(fh: TextIO) -> list[PoiRecord]:
    reader = csv.DictReader(fh)
    missing = [c for c in POI_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise SchemaError(f"POI file missing columns {missing}")
    out = []
    for row in reader:
        try:
            out.append(PoiRecord(row["provider_id"], GeoPoint(float(row["lat"]), float(row["lon"])),
                                 tuple(t for t in row["raw_types"].split(";") if t), row["category"],
                                 row["sector_id"] or None))
        except (ValueError, ValidationError) as exc:
            raise SchemaError(f"POI file line {reader.line_num}: {exc}") from exc
    return out
