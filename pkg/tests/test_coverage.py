import io

import pytest
from hypothesis import given, settings, strategies as st

from builders import cover_first, east_line
from sidewalk_audit.errors import ClientError, ValidationError
from sidewalk_audit.coverage import (
    CoverageMap,
    FixtureStreetViewClient,
    Panorama,
    build_coverage,
    filter_segments,
    read_verdicts,
    write_verdicts,
)
from sidewalk_audit.geo import GeoPoint
from sidewalk_audit.poi import PoiRecord

POI = PoiRecord("poi-1", GeoPoint(30.73, 76.78), ("school",), "Education")


class Everywhere:
    def query(self, point):
        return Panorama("p", point)


class Nowhere:
    def query(self, point):
        return None


class Broken:
    """Raises on every other call, starting with the first."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    def query(self, point):
        self.calls += 1
        if self.calls % 2:
            raise ClientError("boom")
        return self.inner.query(point)


def test_saturated_and_empty_coverage():
    full = build_coverage(Everywhere(), POI, radius=300, cell_size=70)
    assert full.cells and all(c.covered for c in full.cells)
    assert not any(c.covered for c in build_coverage(Nowhere(), POI, radius=300, cell_size=70).cells)


def test_ne_quadrant_fixture():
    grid = build_coverage(Nowhere(), POI, radius=1050, cell_size=70).cells
    assert len(grid) == 30 * 30
    ne = [c for c in grid if c.id[0] >= 15 and c.id[1] >= 15]
    client = FixtureStreetViewClient([Panorama(f"ne{c.id}", c.centroid) for c in ne], search_radius=50)
    cov = build_coverage(client, POI, radius=1050, cell_size=70)
    assert {c.id for c in cov.covered_cells} == {c.id for c in ne}


def test_pano_outside_circumradius_not_counted():
    grid = build_coverage(Nowhere(), POI, radius=105, cell_size=70).cells
    c = grid[0]
    far = GeoPoint(c.centroid.lat + 49.8 / 111195.0, c.centroid.lon)  # inside search radius, outside 49.5 m
    cov = build_coverage(FixtureStreetViewClient([Panorama("x", far)], search_radius=50), POI, 105, 70)
    assert not cov.cells[0].covered


def test_client_failures_degrade_to_uncovered(caplog):
    cov = build_coverage(Broken(Everywhere()), POI, radius=300, cell_size=70)
    flags = [c.covered for c in cov.cells]
    assert flags == [i % 2 == 1 for i in range(len(flags))]
    assert "boom" in caplog.text


def test_build_coverage_validates():
    with pytest.raises(ValidationError):
        build_coverage(Everywhere(), POI, radius=0)
    from sidewalk_audit.errors import ConfigError
    with pytest.raises(ConfigError):
        build_coverage(Everywhere(), POI, radius=300, cell_size=100)


def test_fixture_client_failures_and_nearest():
    a, b = GeoPoint(30.73, 76.78), GeoPoint(30.7301, 76.78)
    client = FixtureStreetViewClient([Panorama("b", b), Panorama("a", a)], 50, failures=[GeoPoint(30.74, 76.78)])
    assert client.query(GeoPoint(30.73002, 76.78)).pano_id == "a"
    assert client.query(GeoPoint(30.8, 76.78)) is None
    with pytest.raises(ClientError):
        client.query(GeoPoint(30.74, 76.78))


def test_filter_full_and_half():
    line = east_line(100)
    full = filter_segments({"s": line}, cover_first(line, 110, 10))
    assert full[0].fraction == 1.0 and full[0].retained
    half = filter_segments({"s": line}, cover_first(line, 50, 10))
    assert half[0].fraction == pytest.approx(0.5, abs=0.02)
    assert not half[0].retained


def test_threshold_boundary_inclusive():
    line = east_line(100)
    (v75,) = filter_segments({"s": line}, cover_first(line, 75, 5))
    assert v75.fraction == 0.75 and v75.retained
    (v74,) = filter_segments({"s": line}, cover_first(line, 74, 2))
    assert v74.fraction == 0.74 and not v74.retained


def test_outside_map_counts_uncovered():
    line = east_line(100)
    cells = [c for c in cover_first(line, 60, 10) if c.id[1] < 6]  # map stops at 60 m
    (v,) = filter_segments({"s": line}, cells)
    assert v.fraction == pytest.approx(0.6)


def test_filter_accepts_coverage_map_and_sorts():
    line = east_line(100)
    cov = CoverageMap("p", 100, 10, tuple(cover_first(line, 110, 10)))
    verdicts = filter_segments({"b": line, "a": line}, cov)
    assert [v.segment_id for v in verdicts] == ["a", "b"]
    with pytest.raises(ValidationError):
        filter_segments({"a": line}, cov, threshold=1.5)


masks = st.lists(st.booleans(), min_size=12, max_size=12)


@settings(max_examples=100)
@given(masks, masks, st.floats(0, 1), st.floats(0, 1))
def test_verdict_monotonicity(mask, extra, t1, t2):
    line = east_line(110)
    base = [c.with_covered(m) for c, m in zip(cover_first(line, 0, 10), mask)]
    more = [c.with_covered(m or e) for c, m, e in zip(cover_first(line, 0, 10), mask, extra)]
    (vb,), (vm,) = filter_segments({"s": line}, base), filter_segments({"s": line}, more)
    assert not (vb.retained and not vm.retained)
    hi, lo = max(t1, t2), min(t1, t2)
    assert filter_segments({"s": line}, base, hi)[0].retained <= filter_segments({"s": line}, base, lo)[0].retained


def test_verdict_csv_roundtrip():
    line = east_line(100)
    vs = filter_segments({"s1": line, "s2": line}, cover_first(line, 80, 10))
    buf = io.StringIO()
    write_verdicts([("poi-1", v) for v in vs], buf)
    assert read_verdicts(io.StringIO(buf.getvalue())) == {"poi-1": vs}
