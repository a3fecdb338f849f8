"""Generate the bundled mini-sector fixture and its oracle ScoreSet.

    python3 scripts/build_mini_sector.py [--out tests/fixtures/mini_sector]

A 5 x 4 street grid (250 m blocks, 31 segments) split into two sectors.
The east column has no street-view imagery and one south-west segment is
imaged only at its west end, so both fall below the coverage threshold.  Expected
values come from tests/oracles.py (networkx tracing, plain-loop scoring),
never from the package's own scoring or tracing code.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import networkx as nx

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))
import oracles  # noqa: E402

LAT0, LON0 = 30.72, 76.78
M_PER_DEG = 111195.0
COLS, ROWS, BLOCK = 5, 4, 250.0
BUDGET = 600.0
QUERY_RADIUS = 400.0
PANO_STEP = 10.0

SECTOR_SPLIT_X = 625.0


def to_ll(x: float, y: float) -> tuple[float, float]:
    lat = LAT0 + y / M_PER_DEG
    lon = LON0 + x / (M_PER_DEG * math.cos(math.radians(LAT0)))
    return round(lat, 9), round(lon, 9)


def rect(x0, y0, x1, y1):
    ring = [to_ll(x0, y0), to_ll(x1, y0), to_ll(x1, y1), to_ll(x0, y1), to_ll(x0, y0)]
    return {"type": "Polygon", "coordinates": [[[lon, lat] for lat, lon in ring]]}


def node_xy(i, j):
    return i * BLOCK, j * BLOCK


def segments():
    """(id, (i0, j0), (i1, j1), highway, midpoint_vertex)."""
    out = []
    for j in range(ROWS):
        for i in range(COLS - 1):
            hw = "secondary" if j == 1 else "primary" if j == 3 and i == 0 else "residential"
            out.append((f"h{j}_{i}", (i, j), (i + 1, j), hw, False))
    for i in range(COLS):
        for j in range(ROWS - 1):
            hw = "tertiary" if i == 2 else "service" if i == 4 else "residential"
            out.append((f"v{i}_{j}", (i, j), (i, j + 1), hw, i == 1))
    return out


UNIMAGED = {s[0] for s in segments() if s[2][0] == COLS - 1}
PARTIAL = {"h0_0": 0.0}

POIS = [
    # id, x, y, provider types
    ("p01", 30, 20, ["school", "point_of_interest"]),
    ("p02", 260, 240, ["atm", "finance"]),
    ("p03", 480, 510, ["bank", "finance"]),
    ("p04", 120, 700, ["cafe", "food"]),
    ("p05", 700, 260, ["hospital", "health"]),
    ("p06", 980, 740, ["restaurant", "food"]),
    ("p07", 800, 500, ["place_of_worship"]),
    ("p08", 560, 100, ["store"]),
    ("p09", 900, 20, ["park"]),
    ("p10", 330, 420, ["pharmacy", "health"]),
    ("p11", 400, 600, ["heliport", "point_of_interest"]),
    ("p12", 1100, 400, ["gas_station"]),
]
CATEGORY = {
    "p01": "Education", "p02": "Financial services", "p03": "Financial services", "p04": "Food",
    "p05": "Healthcare", "p06": "Food", "p07": "Religious", "p08": "Commercial", "p09": "Social",
    "p10": "Healthcare", "p12": "Utilities",
}

LABELS = [
    # id, segment, type, severity, tags
    ("L01", "h1_0", "SurfaceProblem", 3, "cracks;broken"),
    ("L02", "h1_0", "ObstacleInPath", 2, "drainage"),
    ("L03", "v1_0", "NoSidewalk", 3, "street has no sidewalk"),
    ("L04", "v1_0", "CurbStyle", 1, ""),
    ("L05", "h2_1", "Crosswalk", 2, "paint fading"),
    ("L06", "v2_1", "ObstacleInPath", 1, "parked car"),
    ("L07", "h1_2", "SurfaceProblem", 2, "uneven/slanted"),
    ("L08", "v3_1", "MissingCurbRamp", 3, "no alternate route"),
    ("L09", "h3_1", "PedestrianSignal", 1, ""),
    ("L10", "h0_2", "ObstacleInPath", 1, "carts"),
    ("L11", "v0_2", "NoSidewalk", 2, "ends abruptly"),
    ("L12", "h2_3", "ObstacleInPath", 3, "construction"),
    ("L13", "h0_0", "SurfaceProblem", 3, "bumpy"),
    ("L14", "v3_0", "SurfaceProblem", 1, "grass"),
    ("L15", "h1_1", "CurbStyle", 1, "not level with street"),
]

EVENTS = [
    ("MissionStart", "h1_0"), ("SegmentChange", "h1_1"), ("SegmentChange", "h1_1"), ("Jump", "v2_1"),
    ("SegmentChange", "h1_0"), ("SegmentChange", "h3_1"), ("Jump", "h3_1"), ("SegmentChange", "v0_2"),
]

CATEGORIES = ("Financial services", "Education", "Healthcare", "Public service", "Transport", "Food",
              "Religious", "Utilities", "Commercial", "Social")


def segment_xy(seg):
    _, a, b, _, mid = seg
    pts = [node_xy(*a), node_xy(*b)]
    if mid:
        pts.insert(1, ((pts[0][0] + pts[1][0]) / 2, (pts[0][1] + pts[1][1]) / 2))
    return pts


def oracle_length(pts_xy):
    lls = [to_ll(*p) for p in pts_xy]
    return sum(oracles.haversine(*lls[k], *lls[k + 1]) for k in range(len(lls) - 1))


def panoramas():
    out = {}
    for seg in segments():
        sid = seg[0]
        if sid in UNIMAGED:
            continue
        (x0, y0), (x1, y1) = node_xy(*seg[1]), node_xy(*seg[2])
        share = PARTIAL.get(sid, 1.0)
        n = int(round(BLOCK * share / PANO_STEP))
        for k in range(n + 1):
            f = k * PANO_STEP / BLOCK
            lat, lon = to_ll(x0 + (x1 - x0) * f, y0 + (y1 - y0) * f)
            key = (lat, lon)
            out.setdefault(key, f"pano_{sid}_{k:02d}")
    return [{"pano_id": pid, "lat": lat, "lon": lon} for (lat, lon), pid in sorted(out.items(), key=lambda t: t[1])]


def places_recordings(sector_docs):
    from sidewalk_audit.geo import load_zones
    from sidewalk_audit.poi import sample_points

    recs = []
    seen = set()
    for zone in load_zones(sector_docs):
        for pt in sample_points(zone, QUERY_RADIUS):
            results = []
            for pid, x, y, types in POIS:
                lat, lon = to_ll(x, y)
                if oracles.haversine(pt.lat, pt.lon, lat, lon) <= QUERY_RADIUS:
                    results.append({"place_id": pid, "name": f"Place {pid}", "types": types,
                                    "geometry": {"location": {"lat": lat, "lng": lon}}})
                    seen.add(pid)
            recs.append({"center": {"lat": pt.lat, "lon": pt.lon}, "radius": QUERY_RADIUS,
                         "response": {"status": "OK" if results else "ZERO_RESULTS", "results": results}})
    missing = {p[0] for p in POIS} - seen
    if missing:
        raise SystemExit(f"POIs not reachable by any sample query: {sorted(missing)}")
    return recs


def oracle_expected():
    g = nx.Graph()
    lengths = {}
    for seg in segments():
        lengths[seg[0]] = oracle_length(segment_xy(seg))
        g.add_edge(seg[1], seg[2], id=seg[0], weight=lengths[seg[0]])

    poi_segments, poi_info = {}, {}
    for pid, x, y, _ in POIS:
        if pid not in CATEGORY:
            continue
        lat, lon = to_ll(x, y)
        origin = min(g.nodes, key=lambda n: oracles.haversine(lat, lon, *to_ll(*node_xy(*n))))
        dist = nx.single_source_dijkstra_path_length(g, origin, weight="weight")
        traced = {d["id"] for u, v, d in g.edges(data=True)
                  if dist.get(u, math.inf) <= BUDGET or dist.get(v, math.inf) <= BUDGET}
        poi_segments[pid] = sorted(traced - UNIMAGED - set(PARTIAL))
        sector = "unassigned" if x > 1060 else ("Sector 1" if x < SECTOR_SPLIT_X else "Sector 2")
        poi_info[pid] = (CATEGORY[pid], sector)

    corpus = sorted({s for ss in poi_segments.values() for s in ss})
    by_seg = {}
    for _, sid, lt, sev, _ in LABELS:
        by_seg.setdefault(sid, []).append((lt, sev))
    ss = oracles.scoreset(by_seg, {s: lengths[s] for s in corpus}, poi_segments, poi_info, CATEGORIES)
    return {
        "retained": {pid: segs for pid, segs in sorted(poi_segments.items())},
        "segments": {s: {"raw": ss["raw"][s], "score": ss["seg"][s], "length_m": lengths[s]} for s in corpus},
        "pois": {pid: {"score": v[0], "length_m": v[1], "n_segments": v[2], "category": poi_info[pid][0],
                       "sector_id": poi_info[pid][1]} for pid, v in ss["poi"].items()},
        "sector_category": [{"sector_id": s, "category": c, "score": v[0], "n_pois": v[1]}
                            for (s, c), v in sorted(ss["cells"].items())],
        "categories": ss["across"],
        "findings": ss["findings"],
    }


def build(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    feats = []
    for seg in segments():
        coords = [[to_ll(*p)[1], to_ll(*p)[0]] for p in segment_xy(seg)]
        feats.append({"type": "Feature", "id": seg[0], "properties": {"highway": seg[3]},
                      "geometry": {"type": "LineString", "coordinates": coords}})
    roads = {"type": "FeatureCollection", "features": feats}
    sectors = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"name": "Sector 1"}, "geometry": rect(-60, -60, SECTOR_SPLIT_X, 810)},
        {"type": "Feature", "properties": {"name": "Sector 2"}, "geometry": rect(SECTOR_SPLIT_X, -60, 1060, 810)},
    ]}
    wards = {"type": "FeatureCollection", "features": [
        {"type": "Feature", "properties": {"name": "Ward 1", "population": 12000}, "geometry": rect(-60, -60, 300, 810)},
        {"type": "Feature", "properties": {"name": "Ward 2", "population": 18000}, "geometry": rect(300, -60, 900, 810)},
        {"type": "Feature", "properties": {"name": "Ward 3", "population": 9000}, "geometry": rect(900, -60, 1300, 810)},
    ]}
    dump = lambda name, doc: (out / name).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    dump("roads.geojson", roads)
    dump("sectors.geojson", sectors)
    dump("wards.geojson", wards)
    dump("places.json", {"recordings": places_recordings(sectors)})
    panos = panoramas()
    dump("streetview.json", {"search_radius_m": 50.0, "panoramas": panos, "failures": []})

    seg_by_id = {s[0]: s for s in segments()}
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("label_id", "segment_id", "label_type", "severity", "tags", "lat", "lon", "pano_id"))
        for lid, sid, lt, sev, tags in LABELS:
            pts = segment_xy(seg_by_id[sid])
            lat, lon = to_ll((pts[0][0] + pts[-1][0]) / 2, (pts[0][1] + pts[-1][1]) / 2)
            w.writerow([lid, sid, lt, sev, tags, lat, lon, f"pano_{sid}_00"])
    with open(out / "events.jsonl", "w", encoding="utf-8") as fh:
        for kind, sid in EVENTS:
            fh.write(json.dumps({"kind": kind, "segment_id": sid}) + "\n")
    (out / "audit.ini").write_text(
        "[paths]\nroads = roads.geojson\nsectors = sectors.geojson\nwards = wards.geojson\n"
        "labels = labels.csv\nevents = events.jsonl\nfixtures = .\n\n"
        f"[params]\ntrace_budget = {BUDGET:g}\nquery_radius = {QUERY_RADIUS:g}\n"
        f"sample_spacing = {QUERY_RADIUS:g}\nworkers = 4\n",
        encoding="utf-8")
    dump("expected_scoreset.json", oracle_expected())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "tests" / "fixtures" / "mini_sector")
    build(ap.parse_args().out)


if __name__ == "__main__":
    main()
