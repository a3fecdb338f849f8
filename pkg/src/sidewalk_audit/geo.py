"""Spherical geometry primitives shared by every pipeline stage.

Distances use a spherical earth (R = 6,371,000 m).  Planar work (areas,
polygon intersections) happens in a local equirectangular projection anchored
at the dataset centroid, which is accurate to well under a percent across a
city.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

from shapely.geometry import LinearRing, Point, Polygon

from .errors import ConfigError, ValidationError

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0
METERS_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0

DEFAULT_CELL_SIZE_M = 70.0
CELL_SIZE_BAND_M = (60.0, 80.0)

# ceil() slack so 210 m / 70 m stays 3 cells despite float noise
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValidationError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValidationError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValidationError(f"longitude {self.lon} outside [-180, 180]")

    @classmethod
    def from_lonlat(cls, coords: Sequence[float]) -> GeoPoint:
        """Build from a GeoJSON ``[lon, lat]`` position."""
        return cls(lat=float(coords[1]), lon=float(coords[0]))

    def to_lonlat(self) -> list[float]:
        return [self.lon, self.lat]


def _haversine(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points."""
    return _haversine(a.lat, a.lon, b.lat, b.lon)


@dataclass(frozen=True)
class Polyline:
    points: tuple[GeoPoint, ...]

    def __post_init__(self) -> None:
        if len(self.points) == 0:
            raise ValidationError("polyline must contain at least one point")
        object.__setattr__(self, "points", tuple(self.points))

    @classmethod
    def from_lonlat(cls, coords: Iterable[Sequence[float]]) -> Polyline:
        return cls(tuple(GeoPoint.from_lonlat(c) for c in coords))

    @cached_property
    def cumulative(self) -> tuple[float, ...]:
        """Arc length in meters at each vertex."""
        out = [0.0]
        for a, b in zip(self.points, self.points[1:]):
            out.append(out[-1] + haversine_distance(a, b))
        return tuple(out)

    @property
    def length(self) -> float:
        return self.cumulative[-1]

    def reversed(self) -> Polyline:
        return Polyline(self.points[::-1])

    def interpolate(self, distance: float) -> tuple[float, float]:
        """(lat, lon) at ``distance`` meters along the line.

        Interpolation is linear in lat/lon within each span, which is exact
        enough at sub-kilometre span lengths.
        """
        cum = self.cumulative
        if distance <= 0.0 or len(self.points) == 1:
            p = self.points[0]
            return p.lat, p.lon
        if distance >= cum[-1]:
            p = self.points[-1]
            return p.lat, p.lon
        i = bisect.bisect_right(cum, distance) - 1
        span = cum[i + 1] - cum[i]
        t = 0.0 if span == 0.0 else (distance - cum[i]) / span
        a, b = self.points[i], self.points[i + 1]
        return a.lat + t * (b.lat - a.lat), a.lon + t * (b.lon - a.lon)

    def to_lonlat(self) -> list[list[float]]:
        return [p.to_lonlat() for p in self.points]


def polyline_length(p: Polyline) -> float:
    """Sum of consecutive haversine spans, in meters."""
    if not isinstance(p, Polyline):
        p = Polyline(tuple(p))
    return p.length


@dataclass(frozen=True)
class BBox:
    """Lat/lon rectangle; south/west inclusive, north/east exclusive for membership."""

    south: float
    west: float
    north: float
    east: float

    def __post_init__(self) -> None:
        vals = (self.south, self.west, self.north, self.east)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite bounds {vals}")
        if not (self.north > self.south and self.east > self.west):
            raise ValidationError(f"degenerate region {vals}")

    @classmethod
    def around(cls, center: GeoPoint, half_side: float) -> BBox:
        """Square of side ``2 * half_side`` meters centred on ``center``."""
        dlat = half_side / METERS_PER_DEG_LAT
        dlon = half_side / (METERS_PER_DEG_LAT * math.cos(math.radians(center.lat)))
        return cls(center.lat - dlat, center.lon - dlon, center.lat + dlat, center.lon + dlon)

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.south + self.north) / 2, (self.west + self.east) / 2)

    def contains(self, lat: float, lon: float) -> bool:
        return self.south <= lat < self.north and self.west <= lon < self.east

    def width_m(self) -> float:
        ref = math.radians((self.south + self.north) / 2)
        return (self.east - self.west) * METERS_PER_DEG_LAT * math.cos(ref)

    def height_m(self) -> float:
        return (self.north - self.south) * METERS_PER_DEG_LAT


@dataclass(frozen=True)
class GridCell:
    id: tuple[int, int]
    bounds: BBox
    covered: bool = False

    @property
    def centroid(self) -> GeoPoint:
        return self.bounds.center

    def with_covered(self, covered: bool) -> GridCell:
        return GridCell(self.id, self.bounds, covered)

    def to_feature(self) -> dict:
        b = self.bounds
        ring = [[b.west, b.south], [b.east, b.south], [b.east, b.north], [b.west, b.north], [b.west, b.south]]
        return {
            "type": "Feature",
            "geometry": {"type": "Polygon", "coordinates": [ring]},
            "properties": {"row": self.id[0], "col": self.id[1], "covered": self.covered},
        }


def make_grid(
    region: BBox,
    cell_size: float = DEFAULT_CELL_SIZE_M,
    band: tuple[float, float] | None = CELL_SIZE_BAND_M,
) -> list[GridCell]:
    """Tile ``region`` with square cells of ``cell_size`` meters.

    Cell side is converted to degrees at the region's centre latitude.  Rows
    grow northwards from the south edge, columns eastwards from the west edge;
    the last row/column may overhang the region.  Pass ``band=None`` to skip
    the cell-size range check (used for coarse sampling grids).
    """
    if not (cell_size > 0 and math.isfinite(cell_size)):
        raise ConfigError(f"cell size must be positive, got {cell_size}")
    if band is not None and not band[0] <= cell_size <= band[1]:
        raise ConfigError(f"cell size {cell_size} m outside configured band {band}")

    ref_lat = math.radians((region.south + region.north) / 2)
    dlat = cell_size / METERS_PER_DEG_LAT
    dlon = cell_size / (METERS_PER_DEG_LAT * math.cos(ref_lat))
    n_rows = max(1, math.ceil(region.height_m() / cell_size - _CEIL_EPS))
    n_cols = max(1, math.ceil(region.width_m() / cell_size - _CEIL_EPS))

    cells = []
    for r in range(n_rows):
        south = region.south + r * dlat
        north = region.south + (r + 1) * dlat
        for c in range(n_cols):
            west = region.west + c * dlon
            east = region.west + (c + 1) * dlon
            cells.append(GridCell((r, c), BBox(south, west, north, east)))
    return cells


class _CellIndex:
    """Point -> cell lookup, O(1) for cells drawn from one regular grid."""

    def __init__(self, cells: Iterable[GridCell]) -> None:
        self.cells = list(cells)
        self.by_id = {c.id: c for c in self.cells}
        self.regular = self._fit()

    def _fit(self) -> bool:
        if not self.cells or len(self.by_id) != len(self.cells):
            return False
        c0 = self.cells[0]
        self.dlat = c0.bounds.north - c0.bounds.south
        self.dlon = c0.bounds.east - c0.bounds.west
        self.origin_lat = c0.bounds.south - c0.id[0] * self.dlat
        self.origin_lon = c0.bounds.west - c0.id[1] * self.dlon
        tol_lat = 1e-6 * self.dlat
        tol_lon = 1e-6 * self.dlon
        for c in self.cells:
            r, k = c.id
            if (
                abs(c.bounds.south - (self.origin_lat + r * self.dlat)) > tol_lat
                or abs(c.bounds.west - (self.origin_lon + k * self.dlon)) > tol_lon
                or abs(c.bounds.north - c.bounds.south - self.dlat) > tol_lat
                or abs(c.bounds.east - c.bounds.west - self.dlon) > tol_lon
            ):
                return False
        return True

    def find(self, lat: float, lon: float) -> GridCell | None:
        if self.regular:
            r = math.floor((lat - self.origin_lat) / self.dlat)
            k = math.floor((lon - self.origin_lon) / self.dlon)
            for dr in (0, -1, 1):
                for dk in (0, -1, 1):
                    cell = self.by_id.get((r + dr, k + dk))
                    if cell is not None and cell.bounds.contains(lat, lon):
                        return cell
            return None
        for cell in self.cells:
            if cell.bounds.contains(lat, lon):
                return cell
        return None


def sample_positions(length: float, step: float = 1.0) -> list[float]:
    """Arc-length positions of samples taken at the midpoints of equal bins no longer than ``step``."""
    if length <= 0.0:
        return [0.0]
    n = max(1, math.ceil(length / step - _CEIL_EPS))
    bin_len = length / n
    return [(k + 0.5) * bin_len for k in range(n)]


def covered_fraction(p: Polyline, covered_cells: Iterable[GridCell], step: float = 1.0) -> float:
    """Fraction of ``p``'s length lying inside ``covered_cells``.

    The line is cut into equal bins of at most ``step`` meters and each bin's
    midpoint is tested for cell membership; a 100 m line therefore yields 100
    samples.  Samples outside every given cell count as uncovered.
    """
    index = _CellIndex(covered_cells)
    if not index.cells:
        return 0.0
    positions = sample_positions(p.length, step)
    hits = 0
    for s in positions:
        lat, lon = p.interpolate(s)
        if index.find(lat, lon) is not None:
            hits += 1
    return hits / len(positions)


class LocalProjection:
    """Equirectangular projection to meters about an anchor point."""

    def __init__(self, anchor: GeoPoint) -> None:
        self.anchor = anchor
        self._kx = METERS_PER_DEG_LAT * math.cos(math.radians(anchor.lat))

    @classmethod
    def centered_on(cls, points: Iterable[GeoPoint]) -> LocalProjection:
        pts = list(points)
        if not pts:
            raise ValidationError("cannot anchor a projection on zero points")
        lat = math.fsum(p.lat for p in pts) / len(pts)
        lon = math.fsum(p.lon for p in pts) / len(pts)
        return cls(GeoPoint(lat, lon))

    def to_xy(self, p: GeoPoint) -> tuple[float, float]:
        return (p.lon - self.anchor.lon) * self._kx, (p.lat - self.anchor.lat) * METERS_PER_DEG_LAT

    def to_point(self, x: float, y: float) -> GeoPoint:
        return GeoPoint(self.anchor.lat + y / METERS_PER_DEG_LAT, self.anchor.lon + x / self._kx)

    def polygon(self, ring: Sequence[GeoPoint]) -> Polygon:
        return Polygon([self.to_xy(p) for p in ring])


@dataclass(frozen=True)
class ZonePolygon:
    """A ward or sector boundary with its attributes (e.g. ``population``)."""

    id: str
    ring: tuple[GeoPoint, ...]
    attributes: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ring = tuple(self.ring)
        object.__setattr__(self, "ring", ring)
        if len(ring) < 4:
            raise ValidationError(f"zone {self.id!r}: ring needs at least 4 positions")
        if ring[0] != ring[-1]:
            raise ValidationError(f"zone {self.id!r}: ring is not closed")
        # collinear rings pass here; allocation reports them as zero-area
        if self.shape.convex_hull.area > 0 and not LinearRing(self.shape.exterior.coords).is_simple:
            raise ValidationError(f"zone {self.id!r}: ring is self-intersecting")

    @cached_property
    def shape(self) -> Polygon:
        """Polygon in lon/lat coordinates, for containment tests."""
        return Polygon([(p.lon, p.lat) for p in self.ring])

    @property
    def population(self) -> float:
        try:
            return float(self.attributes["population"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"zone {self.id!r} has no numeric population") from exc

    @property
    def bbox(self) -> BBox:
        lats = [p.lat for p in self.ring]
        lons = [p.lon for p in self.ring]
        return BBox(min(lats), min(lons), max(lats), max(lons))

    def contains(self, p: GeoPoint) -> bool:
        return bool(self.shape.covers(Point(p.lon, p.lat)))


def load_zones(doc: Mapping[str, Any]) -> list[ZonePolygon]:
    """Read Polygon features from a GeoJSON FeatureCollection.

    The zone id comes from ``properties.name``, ``properties.id`` or the
    feature id, in that order.  Only the exterior ring is kept.
    """
    if doc.get("type") != "FeatureCollection":
        raise ValidationError("expected a GeoJSON FeatureCollection")
    zones = []
    for i, feat in enumerate(doc.get("features", [])):
        geom = feat.get("geometry") or {}
        props = dict(feat.get("properties") or {})
        if geom.get("type") != "Polygon":
            log.warning("skipping feature %d: geometry %s is not a Polygon", i, geom.get("type"))
            continue
        zid = props.get("name", props.get("id", feat.get("id", f"zone{i}")))
        ring = tuple(GeoPoint.from_lonlat(c) for c in geom["coordinates"][0])
        zones.append(ZonePolygon(str(zid), ring, props))
    if not zones:
        raise ValidationError("no Polygon features found")
    return zones


@dataclass
class Allocation:
    by_sector: dict[str, float]
    dropped: dict[str, float]
    total_population: float

    @property
    def dropped_total(self) -> float:
        return math.fsum(self.dropped.values())

    @property
    def dropped_fraction(self) -> float:
        if self.total_population == 0:
            return 0.0
        return self.dropped_total / self.total_population


def allocate_population(wards: Sequence[ZonePolygon], sectors: Sequence[ZonePolygon]) -> Allocation:
    """Split each ward's population across sectors by intersection area.

    Population is assumed uniform within a ward.  Whatever falls outside all
    sectors is reported per ward in ``Allocation.dropped``.  Sectors must not
    overlap, otherwise population would be double counted.
    """
    proj = LocalProjection.centered_on(p for z in (*wards, *sectors) for p in z.ring)
    sector_polys = [(s.id, proj.polygon(s.ring)) for s in sectors]
    for i, (sid_a, a) in enumerate(sector_polys):
        for sid_b, b in sector_polys[i + 1:]:
            overlap = a.intersection(b).area
            if overlap > 1e-6 * min(a.area, b.area):
                raise ValidationError(f"sectors {sid_a!r} and {sid_b!r} overlap by {overlap:.1f} m2")

    by_sector = {s.id: 0.0 for s in sectors}
    dropped: dict[str, float] = {}
    total = 0.0
    for ward in wards:
        pop = ward.population
        if pop < 0:
            raise ValidationError(f"ward {ward.id!r} has negative population")
        poly = proj.polygon(ward.ring)
        if poly.area <= 0.0:
            raise ValidationError(f"ward {ward.id!r} has zero area")
        total += pop
        allocated = 0.0
        for sid, spoly in sector_polys:
            share = poly.intersection(spoly).area / poly.area
            if share > 0:
                by_sector[sid] += pop * share
                allocated += pop * share
        dropped[ward.id] = max(0.0, pop - allocated)
    return Allocation(by_sector, dropped, total)
