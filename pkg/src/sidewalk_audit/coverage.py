"""Street-view coverage grids around POIs and the segment coverage filter."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence, TextIO

from .clients import TokenBucket, get_json
from .errors import ClientError, SchemaError, ValidationError
from .geo import (
    DEFAULT_CELL_SIZE_M,
    BBox,
    GeoPoint,
    GridCell,
    LocalProjection,
    Polyline,
    covered_fraction,
    haversine_distance,
    make_grid,
)
from .poi import PoiRecord

log = logging.getLogger(__name__)

DEFAULT_RADIUS_M = 1000.0
COVERAGE_THRESHOLD = 0.75


@dataclass(frozen=True)
class Panorama:
    pano_id: str
    location: GeoPoint


class StreetViewMetaClient(Protocol):
    def query(self, point: GeoPoint) -> Panorama | None:
        """Nearest panorama the provider reports for ``point``, if any."""


@dataclass(frozen=True)
class CoverageMap:
    poi_id: str
    radius: float
    cell_size: float
    cells: tuple[GridCell, ...]

    @property
    def covered_cells(self) -> list[GridCell]:
        return [c for c in self.cells if c.covered]

    def to_geojson(self) -> dict:
        """Covered cells as polygons, for visual QA."""
        feats = []
        for c in self.covered_cells:
            f = c.to_feature()
            f["properties"]["poi_id"] = self.poi_id
            feats.append(f)
        return {"type": "FeatureCollection", "features": feats}


@dataclass(frozen=True)
class CoverageVerdict:
    segment_id: str
    fraction: float
    retained: bool


def build_coverage(
    client: StreetViewMetaClient,
    poi: PoiRecord,
    radius: float = DEFAULT_RADIUS_M,
    cell_size: float = DEFAULT_CELL_SIZE_M,
    bucket: TokenBucket | None = None,
) -> CoverageMap:
    """Grid the ``2 * radius`` square around a POI and mark cells with imagery.

    A cell is covered when the client returns a panorama within the cell's
    circumradius (``cell_size / sqrt 2``) of its centroid.  A client failure
    on one cell marks that cell uncovered.
    """
    if not radius > 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    poi_id = poi.provider_id
    cells = make_grid(BBox.around(poi.location, radius), cell_size)
    reach = cell_size / math.sqrt(2.0)
    marked = []
    for cell in cells:
        centroid = cell.centroid
        try:
            if bucket is not None:
                bucket.acquire()
            pano = client.query(centroid)
        except Exception as exc:  # noqa: BLE001 - degrade to uncovered, never abort the POI
            log.warning("coverage query failed for POI %s cell %s: %s", poi_id, cell.id, exc)
            pano = None
        covered = pano is not None and haversine_distance(pano.location, centroid) <= reach
        marked.append(cell.with_covered(covered))
    return CoverageMap(poi_id, radius, cell_size, tuple(marked))


def filter_segments(
    geometries: Mapping[str, Polyline],
    cov: CoverageMap | Iterable[GridCell],
    threshold: float = COVERAGE_THRESHOLD,
) -> list[CoverageVerdict]:
    """Coverage fraction per segment; retained when fraction >= threshold.

    Portions of a segment outside the map count as uncovered.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    covered = cov.covered_cells if isinstance(cov, CoverageMap) else [c for c in cov if c.covered]
    out = []
    for sid in sorted(geometries):
        frac = covered_fraction(geometries[sid], covered)
        out.append(CoverageVerdict(sid, frac, frac >= threshold))
    return out


class FixtureStreetViewClient:
    """Replays a recorded panorama inventory.

    Fixture layout: ``{"search_radius_m": 50, "panoramas": [{"pano_id",
    "lat", "lon"}], "failures": [{"lat", "lon"}]}``.  ``query`` returns the
    nearest panorama within the search radius (ties by pano id), mirroring a
    metadata endpoint.  Points within 1 m of a listed failure raise
    :class:`ClientError`.
    """

    def __init__(self, panoramas: Sequence[Panorama], search_radius: float = 50.0,
                 failures: Sequence[GeoPoint] = ()) -> None:
        self.search_radius = search_radius
        self.panoramas = list(panoramas)
        self.failures = list(failures)
        self.calls = 0
        anchor = self.panoramas[0].location if self.panoramas else GeoPoint(0.0, 0.0)
        self._proj = LocalProjection(anchor)
        self._buckets: dict[tuple[int, int], list[Panorama]] = defaultdict(list)
        for p in self.panoramas:
            self._buckets[self._bucket(p.location)].append(p)

    def _bucket(self, pt: GeoPoint) -> tuple[int, int]:
        x, y = self._proj.to_xy(pt)
        return math.floor(x / self.search_radius), math.floor(y / self.search_radius)

    @classmethod
    def from_file(cls, path: str | Path) -> FixtureStreetViewClient:
        doc = json.loads(Path(path).read_text("utf-8"))
        try:
            panos = [Panorama(str(p["pano_id"]), GeoPoint(float(p["lat"]), float(p["lon"])))
                     for p in doc.get("panoramas", [])]
            failures = [GeoPoint(float(f["lat"]), float(f["lon"])) for f in doc.get("failures", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad street-view fixture {path}: {exc}") from exc
        return cls(panos, float(doc.get("search_radius_m", 50.0)), failures)

    def query(self, point: GeoPoint) -> Panorama | None:
        self.calls += 1
        if any(haversine_distance(point, f) <= 1.0 for f in self.failures):
            raise ClientError(f"recorded failure at {point.lat},{point.lon}")
        bx, by = self._bucket(point)
        best = None
        best_key = (math.inf, "")
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for p in self._buckets.get((bx + dx, by + dy), ()):
                    d = haversine_distance(point, p.location)
                    if d <= self.search_radius and (d, p.pano_id) < best_key:
                        best, best_key = p, (d, p.pano_id)
        return best


class GoogleStreetViewMetaClient:
    """Live Street View metadata adapter; key read from ``GOOGLE_MAPS_API_KEY``."""

    URL = "https://maps.googleapis.com/maps/api/streetview/metadata"

    def __init__(self, api_key: str | None = None, search_radius: float = 50.0) -> None:
        self.api_key = api_key or os.environ.get("GOOGLE_MAPS_API_KEY")
        if not self.api_key:
            raise ClientError("GOOGLE_MAPS_API_KEY is not set")
        self.search_radius = search_radius

    def query(self, point: GeoPoint) -> Panorama | None:
        doc: dict[str, Any] = get_json(self.URL, {
            "location": f"{point.lat},{point.lon}", "radius": int(self.search_radius),
            "source": "outdoor", "key": self.api_key,
        })
        status = doc.get("status")
        if status == "ZERO_RESULTS":
            return None
        if status != "OK":
            raise ClientError(f"street view metadata status {status}")
        loc = doc["location"]
        return Panorama(doc["pano_id"], GeoPoint(float(loc["lat"]), float(loc["lng"])))


VERDICT_COLUMNS = ("poi_id", "segment_id", "fraction", "retained")


def write_verdicts(rows: Iterable[tuple[str, CoverageVerdict]], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(VERDICT_COLUMNS)
    for poi_id, v in rows:
        w.writerow([poi_id, v.segment_id, repr(v.fraction), int(v.retained)])


def read_verdicts(fh: TextIO) -> dict[str, list[CoverageVerdict]]:
    reader = csv.DictReader(fh)
    if list(reader.fieldnames or []) != list(VERDICT_COLUMNS):
        raise SchemaError(f"coverage file must have columns {VERDICT_COLUMNS}")
    out: dict[str, list[CoverageVerdict]] = defaultdict(list)
    for row in reader:
        out[row["poi_id"]].append(CoverageVerdict(row["segment_id"], float(row["fraction"]), row["retained"] == "1"))
    return dict(out)
