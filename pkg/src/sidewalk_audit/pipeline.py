"""File-coupled pipeline stages.  Each stage reads its inputs from disk and writes its outputs to ``out``."""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable

from .clients import TokenBucket, bounded_map
from .config import AuditConfig
from .coverage import (
    FixtureStreetViewClient,
    GoogleStreetViewMetaClient,
    build_coverage,
    filter_segments,
    read_verdicts,
    write_verdicts,
)
from .errors import SchemaError
from .geo import GeoPoint, haversine_distance, load_zones, allocate_population
from .guidance import (
    EventKind,
    GeminiClient,
    GuidanceRequest,
    GuidanceService,
    MOCK_MODEL_ID,
    MockVlmClient,
    PanoramaRef,
    SessionEvent,
    read_events,
    run_session,
    write_guidance_log,
)
from .labels import RowError, load_taxonomy, parse_labels
from .poi import (
    CATEGORIES,
    UNASSIGNED,
    UNCATEGORIZED,
    FixturePlacesClient,
    GooglePlacesClient,
    PlacesQuery,
    PoiRecord,
    assign_sectors,
    categorize,
    category_table,
    dedup,
    fetch_many,
    load_poi_taxonomy,
    read_pois_csv,
    sample_points,
    write_pois_csv,
)
from .road_graph import RoadNetwork, load_network, nearest_node, trace_paths
from .scoring import build_scoreset, emit_reports

log = logging.getLogger(__name__)

FIXED_CLOCK = datetime(1970, 1, 1, tzinfo=timezone.utc)


def read_json(path: str | Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from exc


def write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _bucket(cfg: AuditConfig) -> TokenBucket:
    return TokenBucket(cfg.rate_limit, capacity=cfg.rate_limit or 1.0)


def places_client(cfg: AuditConfig):
    if cfg.mode == "live":
        return GooglePlacesClient()
    cfg.require("fixtures")
    return FixturePlacesClient.from_file(Path(cfg.fixtures) / "places.json")


def streetview_client(cfg: AuditConfig):
    if cfg.mode == "live":
        return GoogleStreetViewMetaClient()
    cfg.require("fixtures")
    return FixtureStreetViewClient.from_file(Path(cfg.fixtures) / "streetview.json")


def vlm_client(cfg: AuditConfig):
    return GeminiClient(cfg.model_id) if cfg.mode == "live" else MockVlmClient()


def _load_pois(path: Path) -> list[PoiRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        return read_pois_csv(fh)


def _network(cfg: AuditConfig) -> RoadNetwork:
    cfg.require("roads")
    return load_network(read_json(cfg.roads))


def run_pois(cfg: AuditConfig, out: Path) -> dict[str, Path]:
    """Sample query points per sector, fetch, dedup, categorize and count POIs."""
    cfg.require("sectors")
    out.mkdir(parents=True, exist_ok=True)
    sectors = load_zones(read_json(cfg.sectors))
    queries = [PlacesQuery(pt, cfg.query_radius) for s in sectors for pt in sample_points(s, cfg.sample_spacing)]
    batches = fetch_many(places_client(cfg), queries, cfg.workers, _bucket(cfg), cfg.retries)
    raw = [r for batch in batches for r in batch]
    taxonomy = load_poi_taxonomy(cfg.poi_taxonomy)
    pois = assign_sectors([categorize(r, taxonomy) for r in dedup(raw)], sectors)
    log.info("fetched %d POI entries from %d queries; %d unique", len(raw), len(queries), len(pois))

    paths = {"pois": out / "pois.csv", "sector_counts": out / "sector_counts.csv"}
    with open(paths["pois"], "w", newline="", encoding="utf-8") as fh:
        write_pois_csv(pois, fh)
    table = category_table(pois)
    with open(paths["sector_counts"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sector_id", "category", "count"))
        sector_ids = [s.id for s in sectors] + ([UNASSIGNED] if UNASSIGNED in table else [])
        for sid in sector_ids:
            for cat in (*CATEGORIES, UNCATEGORIZED):
                w.writerow([sid, cat, table.get(sid, {}).get(cat, 0)])

    if cfg.wards is not None:
        cfg.require("wards")
        alloc = allocate_population(load_zones(read_json(cfg.wards)), sectors)
        paths["population"] = out / "population.csv"
        with open(paths["population"], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("zone_id", "kind", "population"))
            for sid, pop in alloc.by_sector.items():
                w.writerow([sid, "sector", repr(pop)])
            for wid, pop in alloc.dropped.items():
                w.writerow([wid, "dropped", repr(pop)])
        log.info("population outside all sectors: %.1f%%", 100 * alloc.dropped_fraction)
    return paths


def _audited_pois(pois: Iterable[PoiRecord]) -> list[PoiRecord]:
    return [p for p in pois if p.category != UNCATEGORIZED]


def run_trace(cfg: AuditConfig, pois_path: Path, out: Path) -> dict[str, Path]:
    """Trace the walkable network within the budget around every categorized POI."""
    out.mkdir(parents=True, exist_ok=True)
    net = _network(cfg)
    pois = _audited_pois(_load_pois(pois_path))

    def one(p: PoiRecord) -> list[dict]:
        traced = trace_paths(net, nearest_node(net, p.location), cfg.trace_budget)
        return traced.to_geojson(net, p.provider_id)["features"]

    feats = [f for batch in bounded_map(one, pois, cfg.workers) for f in batch]
    path = out / "traces.geojson"
    write_json(path, {"type": "FeatureCollection", "features": feats})
    return {"traces": path}


def read_traces(path: Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    for f in read_json(path).get("features", []):
        props = f.get("properties") or {}
        out[str(props["poi_id"])].append(str(props["edge_id"]))
    return dict(out)


def run_coverage(cfg: AuditConfig, pois_path: Path, traces_path: Path, out: Path) -> dict[str, Path]:
    """Build per-POI coverage grids and keep traced segments meeting the threshold."""
    out.mkdir(parents=True, exist_ok=True)
    net = _network(cfg)
    pois = {p.provider_id: p for p in _load_pois(pois_path)}
    traces = read_traces(traces_path)
    client = streetview_client(cfg)
    bucket = _bucket(cfg)

    def one(pid: str):
        cov = build_coverage(client, pois[pid], cfg.coverage_radius, cfg.cell_size, bucket)
        verdicts = filter_segments(net.geometries(traces[pid]), cov, cfg.coverage_threshold)
        return cov, verdicts

    order = sorted(traces)
    results = bounded_map(one, order, cfg.workers)
    paths = {"coverage": out / "coverage.csv", "cells": out / "coverage_cells.geojson"}
    with open(paths["coverage"], "w", newline="", encoding="utf-8") as fh:
        write_verdicts(((pid, v) for pid, (_, vs) in zip(order, results) for v in vs), fh)
    cells = [f for cov, _ in results for f in cov.to_geojson()["features"]]
    write_json(paths["cells"], {"type": "FeatureCollection", "features": cells})
    kept = sum(v.retained for _, vs in results for v in vs)
    log.info("coverage: %d of %d traced segment visits retained", kept, sum(len(vs) for _, vs in results))
    return paths


def run_score(cfg: AuditConfig, pois_path: Path, coverage_path: Path, out: Path) -> dict[str, Path]:
    """Score audited segments from labels and aggregate around POIs, sectors and categories."""
    cfg.require("labels")
    net = _network(cfg)
    taxonomy = load_taxonomy(cfg.taxonomy)
    rejects: list[RowError] = []
    labels = parse_labels(Path(cfg.labels), taxonomy, rejects)
    if rejects:
        raise SchemaError(f"{cfg.labels}: {rejects[0]} ({len(rejects)} row(s) rejected)")

    with open(coverage_path, newline="", encoding="utf-8") as fh:
        verdicts = read_verdicts(fh)
    pois = {p.provider_id: p for p in _load_pois(pois_path)}
    retained = {pid: [v.segment_id for v in vs if v.retained] for pid, vs in verdicts.items()}
    corpus = sorted({s for sids in retained.values() for s in sids})
    unknown = [s for s in corpus if s not in net.edges]
    if unknown:
        raise SchemaError(f"coverage file references unknown segments {unknown[:3]}")

    if cfg.aggregation == "straight_line":
        poi_segments = {
            pid: [s for s in corpus if min(haversine_distance(pois[pid].location, q)
                                           for q in net.edges[s].geometry.points) <= cfg.trace_budget]
            for pid in retained
        }
    else:
        poi_segments = retained

    scores = build_scoreset(
        labels,
        {s: net.edges[s].length for s in corpus},
        poi_segments,
        {pid: (pois[pid].category, pois[pid].sector_id) for pid in poi_segments},
        CATEGORIES,
        taxonomy,
        cfg.findings_min_severity,
        cfg.clip_percentile,
    )
    segment_sectors = {}
    if cfg.sectors is not None and Path(cfg.sectors).exists():
        sectors = load_zones(read_json(cfg.sectors))
        for s in corpus:
            geom = net.edges[s].geometry
            mid = GeoPoint(*geom.interpolate(geom.length / 2))
            segment_sectors[s] = next((z.id for z in sectors if z.contains(mid)), "")
    return emit_reports(scores, net.geometries(corpus), out, segment_sectors)


def guidance_requests(net: RoadNetwork, client, segment_ids: Iterable[str],
                      image_dir: Path | None = None) -> dict[str, GuidanceRequest]:
    """Requests for segments whose first and last vertices both have imagery."""
    out = {}
    for sid in sorted(segment_ids):
        e = net.edges[sid]
        ends = [client.query(e.geometry.points[0]), client.query(e.geometry.points[-1])]
        if any(p is None for p in ends):
            log.warning("segment %s lacks boundary panoramas; no guidance", sid)
            continue
        refs = [PanoramaRef(p.pano_id, str(image_dir / f"{p.pano_id}.jpg") if image_dir else "") for p in ends]
        out[sid] = GuidanceRequest(sid, e.road_type, refs[0], refs[1])
    return out


def _guidance(cfg: AuditConfig, net: RoadNetwork, events: list[SessionEvent], segment_ids: Iterable[str],
              out: Path) -> dict[str, Path]:
    requests = guidance_requests(net, streetview_client(cfg), segment_ids, cfg.panoramas)
    clock = (lambda: FIXED_CLOCK) if cfg.mode == "fixture" else None
    model_id = MOCK_MODEL_ID if cfg.mode == "fixture" else cfg.model_id
    service = GuidanceService(vlm_client(cfg), load_taxonomy(cfg.taxonomy), model_id, clock)
    shown = run_session(events, requests, service)
    log.info("guidance: %d message(s) shown, %d model call(s), %d degraded", len(shown), len(service.cache),
             sum(m.degraded for m in service.cache.values()))
    path = out / "guidance.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        write_guidance_log(shown, fh)
    return {"guidance": path}


def run_guidance(cfg: AuditConfig, out: Path) -> dict[str, Path]:
    """Replay an annotation event log and write the guidance shown at each trigger."""
    cfg.require("events")
    out.mkdir(parents=True, exist_ok=True)
    net = _network(cfg)
    with open(cfg.events, encoding="utf-8") as fh:
        events = read_events(fh)
    return _guidance(cfg, net, events, {ev.segment_id for ev in events if ev.segment_id in net.edges}, out)


def run_rate(cfg: AuditConfig, out: Path) -> dict[str, Path]:
    from .ratings import read_ratings_csv, write_stats_report

    cfg.require("ratings")
    with open(cfg.ratings, newline="", encoding="utf-8") as fh:
        matrix = read_ratings_csv(fh)
    return write_stats_report(matrix, out)


def run_audit(cfg: AuditConfig, out: Path) -> dict[str, Path]:
    """pois -> trace -> coverage -> score, then a guidance walk over the audited segments."""
    paths = run_pois(cfg, out)
    paths.update(run_trace(cfg, paths["pois"], out))
    paths.update(run_coverage(cfg, paths["pois"], paths["traces"], out))
    paths.update(run_score(cfg, paths["pois"], paths["coverage"], out))
    with open(paths["coverage"], newline="", encoding="utf-8") as fh:
        audited = sorted({v.segment_id for vs in read_verdicts(fh).values() for v in vs if v.retained})
    net = _network(cfg)
    events = [SessionEvent(EventKind.MISSION_START if i == 0 else EventKind.SEGMENT_CHANGE, sid)
              for i, sid in enumerate(audited)]
    requests_for = set(audited)
    paths.update(_guidance(cfg, net, events, requests_for, out))
    return paths
