import io
import json

import pytest
from hypothesis import given, strategies as st

from sidewalk_audit.errors import ClientError, QuotaExceededError, SchemaError, TransientClientError, ValidationError
from sidewalk_audit.geo import GeoPoint, LocalProjection, ZonePolygon
from sidewalk_audit.poi import (
    CATEGORIES,
    UNASSIGNED,
    UNCATEGORIZED,
    FixturePlacesClient,
    PlacesQuery,
    PoiRecord,
    PoiTaxonomy,
    assign_sectors,
    categorize,
    count_by_category,
    dedup,
    default_poi_taxonomy,
    fetch_many,
    fetch_pois,
    load_reference_counts,
    read_pois_csv,
    sample_points,
    select_sector,
    write_pois_csv,
)

PROJ = LocalProjection(GeoPoint(30.73, 76.78))

# transcribed by hand from the category table, independent of the shipped JSON
TABLE = {
    "Financial services": ["bank", "atm", "finance", "accounting"],
    "Education": ["primary_school", "school", "secondary_school", "university"],
    "Healthcare": ["doctor", "hospital", "pharmacy", "health", "dentist", "drugstore"],
    "Public service": ["local_government_office", "political"],
    "Transport": ["parking", "car_rental", "car_repair"],
    "Food": ["cafe", "food", "bar", "bakery", "restaurant", "grocery_or_supermarket", "meal_takeaway"],
    "Religious": ["place_of_worship", "hindu_temple"],
    "Utilities": ["gas_station"],
    "Commercial": ["store", "beauty_salon", "clothing_store", "electronics_store", "florist", "furniture_store",
                   "general_contractor", "gym", "hardware care", "real_estate_agency", "hardware_store",
                   "travel_agency", "storage", "lawyer", "lodging", "moving_company", "home_goods_store"],
    "Social": ["park", "movie_theatre"],
}


def square(name, x0, y0, side):
    ring = [PROJ.to_point(x, y) for x, y in [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side),
                                             (x0, y0)]]
    return ZonePolygon(name, tuple(ring), {})


def poi(pid, lat, lon, *types, **kw):
    return PoiRecord(pid, GeoPoint(lat, lon), types or ("store",), **kw)


def test_sample_points_square():
    sector = square("S", 0, 0, 800)
    pts = sample_points(sector, 400)
    assert len(pts) == 4
    assert all(sector.contains(p) for p in pts)
    assert pts == sample_points(sector, 400)


def test_sample_points_small_sector():
    pts = sample_points(square("tiny", 0, 0, 100), 400)
    assert len(pts) == 1
    assert square("tiny", 0, 0, 100).contains(pts[0])


def test_sample_points_degenerate():
    a, b = PROJ.to_point(0, 0), PROJ.to_point(100, 0)
    with pytest.raises(ValidationError):
        sample_points(ZonePolygon("line", (a, b, a, a), {}), 400)


def test_query_radius_positive():
    assert PlacesQuery(GeoPoint(0, 0)).radius == 400
    with pytest.raises(ValidationError):
        PlacesQuery(GeoPoint(0, 0), 0)


def _client(results, status="OK", center=GeoPoint(30.73, 76.78)):
    return FixturePlacesClient([{"center": {"lat": center.lat, "lon": center.lon}, "radius": 400,
                                 "response": {"status": status, "results": results}}])


def _result(pid, lat, lon, *types):
    return {"place_id": pid, "types": list(types), "geometry": {"location": {"lat": lat, "lng": lon}}}


def test_fetch_passthrough_and_empty():
    q = PlacesQuery(GeoPoint(30.73, 76.78))
    recs = fetch_pois(_client([_result(f"p{i}", 30.73 + i * 1e-4, 76.78, "atm") for i in range(3)]), q)
    assert [r.provider_id for r in recs] == ["p0", "p1", "p2"]
    assert all(r.category == UNCATEGORIZED for r in recs)
    assert fetch_pois(_client([], status="ZERO_RESULTS"), q) == []
    assert fetch_pois(_client([]), q) == []


def test_fetch_golden_replay():
    from conftest import FIXTURES

    golden = FIXTURES / "places_golden"
    client = FixturePlacesClient.from_file(golden / "recording.json")
    recs = fetch_pois(client, PlacesQuery(GeoPoint(30.7333, 76.7794)))
    buf = io.StringIO()
    write_pois_csv([categorize(r) for r in recs], buf)
    assert buf.getvalue() == (golden / "expected.csv").read_text("utf-8")
    assert fetch_pois(client, PlacesQuery(GeoPoint(30.7369, 76.7794))) == []


def test_fetch_errors():
    q = PlacesQuery(GeoPoint(30.73, 76.78))
    with pytest.raises(QuotaExceededError, match="30.73"):
        fetch_pois(_client([], status="OVER_QUERY_LIMIT"), q)
    with pytest.raises(TransientClientError):
        fetch_pois(_client([], status="UNKNOWN_ERROR"), q)
    with pytest.raises(ClientError):
        fetch_pois(_client([], status="REQUEST_DENIED"), q)
    with pytest.raises(ClientError, match="no recording"):
        fetch_pois(_client([]), PlacesQuery(GeoPoint(10, 10)))


class Flaky:
    """Fails with a transient error ``fails`` times, then answers."""

    def __init__(self, fails):
        self.fails = fails
        self.calls = 0

    def nearby(self, center, radius):
        self.calls += 1
        if self.calls <= self.fails:
            return {"status": "UNKNOWN_ERROR"}
        return {"status": "OK", "results": [_result("x", center.lat, center.lon, "atm")]}


def test_fetch_many_retries_transient():
    client = Flaky(2)
    out = fetch_many(client, [PlacesQuery(GeoPoint(30.73, 76.78))], retries=3, backoff=0)
    assert [r.provider_id for r in out[0]] == ["x"]
    assert client.calls == 3
    with pytest.raises(TransientClientError):
        fetch_many(Flaky(5), [PlacesQuery(GeoPoint(30.73, 76.78))], retries=2, backoff=0)


def test_fetch_many_keeps_query_order():
    queries = [PlacesQuery(GeoPoint(30.7 + i * 1e-3, 76.78)) for i in range(20)]
    recs = [{"center": {"lat": q.center.lat, "lon": q.center.lon}, "radius": 400,
             "response": {"results": [_result(f"p{i}", q.center.lat, q.center.lon, "atm")]}}
            for i, q in enumerate(queries)]
    out = fetch_many(FixturePlacesClient(recs), queries, workers=6)
    assert [b[0].provider_id for b in out] == [f"p{i}" for i in range(20)]


def test_dedup_keeps_first():
    a = poi("a", 30.7, 76.8)
    b = poi("b", 30.7, 76.8)
    c = poi("c", 30.7000000004, 76.8)  # same at 6 decimals
    assert dedup([a, b, c]) == [a]


coords = st.tuples(st.integers(0, 30), st.integers(0, 30)).map(lambda t: (30.7 + t[0] * 3e-7, 76.8 + t[1] * 3e-7))


@given(st.lists(coords, max_size=60))
def test_dedup_properties(cs):
    records = [poi(f"p{i}", lat, lon) for i, (lat, lon) in enumerate(cs)]
    once = dedup(records)
    assert dedup(once) == once
    keys = [(round(r.location.lat, 6), round(r.location.lon, 6)) for r in once]
    assert len(keys) == len(set(keys))
    assert len(once) <= len(records)
    assert set(keys) == {(round(la, 6), round(lo, 6)) for la, lo in cs}


def test_categorize_examples():
    assert categorize(poi("a", 0, 0, "atm")).category == "Financial services"
    assert categorize(poi("g", 0, 0, "gas_station")).category == "Utilities"
    assert categorize(poi("h", 0, 0, "heliport")).category == UNCATEGORIZED
    # first matching provider type wins
    assert categorize(poi("m", 0, 0, "point_of_interest", "cafe", "store")).category == "Food"


def test_every_table_type_maps_to_one_category():
    tax = default_poi_taxonomy()
    seen = {}
    for cat, types in TABLE.items():
        for t in types:
            assert t not in seen
            seen[t] = cat
            assert tax.category_of(t) == cat
    assert set(TABLE) == set(CATEGORIES)


def test_taxonomy_rejects_duplicate_types():
    with pytest.raises(SchemaError):
        PoiTaxonomy({"Food": ["cafe"], "Social": ["cafe"]})


@given(st.lists(st.sampled_from([t for ts in TABLE.values() for t in ts] + ["heliport", "zoo", "x"]),
                min_size=1, max_size=4))
def test_categorize_total(types):
    assert categorize(poi("p", 0, 0, *types)).category in (*CATEGORIES, UNCATEGORIZED)


def test_count_by_category_hand_tally():
    west, east = square("West", 0, 0, 500), square("East", 500, 0, 500)
    pts = []
    for i in range(10):
        x = 100 + 30 * i if i < 6 else 600 + 30 * i
        pts.append(poi(f"c{i}", *PROJ.to_point(x, 200).to_lonlat()[::-1], "store"))
    for i in range(5):
        pts.append(poi(f"f{i}", *PROJ.to_point(700 + 10 * i, 300).to_lonlat()[::-1], "restaurant"))
    pts.append(poi("out", *PROJ.to_point(2000, 2000).to_lonlat()[::-1], "store"))
    pois = assign_sectors([categorize(p) for p in pts], [west, east])
    assert count_by_category(pois, "Commercial", ["West", "East"]) == {"West": 6, "East": 4, UNASSIGNED: 1}
    assert count_by_category(pois, "Food", ["West", "East"]) == {"West": 0, "East": 5}
    assert count_by_category([], "Commercial", ["West", "East"]) == {"West": 0, "East": 0}
    total = sum(sum(count_by_category(pois, c, ["West", "East"]).values()) for c in (*CATEGORIES, UNCATEGORIZED))
    assert total == len(pois)


def test_reference_counts_select_sector_34():
    counts = load_reference_counts()
    assert counts == {"Sector 26": 162, "Sector 34": 171, "Sector 43": 164}
    assert select_sector(counts) == "Sector 34"


def test_select_sector_tie_and_unassigned():
    assert select_sector({"B": 5, "A": 5, UNASSIGNED: 99}) == "A"
    with pytest.raises(ValidationError):
        select_sector({UNASSIGNED: 3})


def test_poi_csv_roundtrip():
    pois = [poi("a", 30.7123456, 76.8, "atm", "finance", category="Financial services", sector_id="S1"),
            poi("b", 30.7, 76.81, "heliport")]
    buf = io.StringIO()
    write_pois_csv(pois, buf)
    assert buf.getvalue().splitlines()[0] == "provider_id,lat,lon,raw_types,category,sector_id"
    assert read_pois_csv(io.StringIO(buf.getvalue())) == pois


def test_poi_record_invariants():
    with pytest.raises(ValidationError):
        PoiRecord("x", GeoPoint(0, 0), ())
    with pytest.raises(ValidationError):
        PoiRecord("x", GeoPoint(0, 0), ("atm",), category="Nightlife")
