"""Pedestrian road graph: GeoJSON loading, snapping and bounded path tracing."""

from __future__ import annotations

import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Mapping

from .errors import ValidationError
from .geo import GeoPoint, LocalProjection, Polyline, haversine_distance

log = logging.getLogger(__name__)

MERGE_TOLERANCE_M = 0.5
DEFAULT_BUDGET_M = 1000.0


class RoadType(str, Enum):
    RESIDENTIAL = "residential"
    TERTIARY = "tertiary"
    SECONDARY = "secondary"
    PRIMARY = "primary"
    OTHER = "other"

    @classmethod
    def from_highway(cls, tag: Any) -> RoadType:
        """Map an OSM ``highway`` value; ``*_link`` roads take their parent class."""
        if not isinstance(tag, str):
            return cls.OTHER
        tag = tag.strip().lower()
        if tag.endswith("_link"):
            tag = tag[: -len("_link")]
        try:
            return cls(tag)
        except ValueError:
            return cls.OTHER


@dataclass(frozen=True)
class Edge:
    id: str
    u: int
    v: int
    geometry: Polyline
    road_type: RoadType

    @property
    def length(self) -> float:
        return self.geometry.length


@dataclass(frozen=True)
class RoadNetwork:
    nodes: Mapping[int, GeoPoint]
    edges: Mapping[str, Edge]

    def __post_init__(self) -> None:
        for e in self.edges.values():
            if e.u not in self.nodes or e.v not in self.nodes:
                raise ValidationError(f"edge {e.id!r} references a missing node")

    @cached_property
    def adjacency(self) -> dict[int, list[tuple[str, int, float]]]:
        adj: dict[int, list[tuple[str, int, float]]] = {n: [] for n in self.nodes}
        for e in self.edges.values():
            adj[e.u].append((e.id, e.v, e.length))
            if e.v != e.u:
                adj[e.v].append((e.id, e.u, e.length))
        return adj

    def geometries(self, edge_ids=None) -> dict[str, Polyline]:
        ids = self.edges.keys() if edge_ids is None else edge_ids
        return {eid: self.edges[eid].geometry for eid in ids}


class _Snapper:
    """Merges vertices closer than ``tol`` meters into one canonical vertex."""

    def __init__(self, proj: LocalProjection, tol: float) -> None:
        self.proj = proj
        self.tol = tol
        self.points: list[GeoPoint] = []
        self._buckets: dict[tuple[int, int], list[int]] = defaultdict(list)

    def key(self, p: GeoPoint) -> int:
        x, y = self.proj.to_xy(p)
        bx, by = math.floor(x / self.tol), math.floor(y / self.tol)
        best, best_d = None, math.inf
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for k in self._buckets.get((bx + dx, by + dy), ()):
                    d = haversine_distance(p, self.points[k])
                    if d <= self.tol and (d < best_d or (d == best_d and k < best)):
                        best, best_d = k, d
        if best is not None:
            return best
        k = len(self.points)
        self.points.append(p)
        self._buckets[(bx, by)].append(k)
        return k


def _feature_id(feat: Mapping[str, Any], index: int) -> str:
    props = feat.get("properties") or {}
    fid = feat.get("id", props.get("id"))
    return str(fid) if fid is not None else f"e{index}"


def load_network(source: Mapping[str, Any], tolerance: float = MERGE_TOLERANCE_M) -> RoadNetwork:
    """Build a RoadNetwork from a GeoJSON FeatureCollection of LineStrings.

    Nodes sit at feature endpoints and at vertices shared by more than one
    feature (or revisited by the same feature); vertices within
    ``tolerance`` meters are merged.  Features are split into edges at every
    node.  Edge ids are the feature id, suffixed ``:k`` when a feature is
    split into several edges.
    """
    feats = source.get("features") if isinstance(source, Mapping) else None
    if not feats:
        raise ValidationError("road network document has no features")

    lines: list[tuple[str, RoadType, list[GeoPoint]]] = []
    for i, feat in enumerate(feats):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "LineString":
            log.warning("skipping feature %d: geometry %s is not a LineString", i, geom.get("type"))
            continue
        coords = geom.get("coordinates") or []
        if len(coords) < 2:
            log.warning("skipping feature %d: fewer than two positions", i)
            continue
        props = feat.get("properties") or {}
        lines.append((_feature_id(feat, i), RoadType.from_highway(props.get("highway")),
                      [GeoPoint.from_lonlat(c) for c in coords]))
    if not lines:
        raise ValidationError("road network document has no usable LineString features")

    proj = LocalProjection.centered_on(p for _, _, pts in lines for p in pts)
    snapper = _Snapper(proj, tolerance)
    keyed: list[list[int]] = []
    uses: dict[int, int] = defaultdict(int)
    forced: set[int] = set()
    for _, _, pts in lines:
        keys = []
        for p in pts:
            k = snapper.key(p)
            if not keys or keys[-1] != k:
                keys.append(k)
        keyed.append(keys)
        forced.update((keys[0], keys[-1]))
        for k, n in _counts(keys).items():
            uses[k] += 1
            if n > 1:
                forced.add(k)
    node_keys = forced | {k for k, n in uses.items() if n > 1}

    node_id: dict[int, int] = {}
    nodes: dict[int, GeoPoint] = {}
    for keys in keyed:
        for k in keys:
            if k in node_keys and k not in node_id:
                node_id[k] = len(node_id)
                nodes[node_id[k]] = snapper.points[k]

    edges: dict[str, Edge] = {}
    for (fid, rtype, _), keys in zip(lines, keyed):
        if len(keys) < 2:
            log.warning("skipping feature %s: collapses to a single point", fid)
            continue
        pieces = []
        start = 0
        for j in range(1, len(keys)):
            if keys[j] in node_keys:
                pieces.append(keys[start:j + 1])
                start = j
        for n, piece in enumerate(pieces):
            eid = fid if len(pieces) == 1 else f"{fid}:{n}"
            if eid in edges:
                raise ValidationError(f"duplicate edge id {eid!r}")
            geom = Polyline(tuple(snapper.points[k] for k in piece))
            edges[eid] = Edge(eid, node_id[piece[0]], node_id[piece[-1]], geom, rtype)
    return RoadNetwork(nodes, edges)


def _counts(keys: list[int]) -> dict[int, int]:
    out: dict[int, int] = defaultdict(int)
    for k in keys:
        out[k] += 1
    return out


def nearest_node(net: RoadNetwork, p: GeoPoint) -> int:
    """Node closest to ``p`` by haversine distance; ties go to the smallest id."""
    if not net.nodes:
        raise ValidationError("network has no nodes")
    return min(net.nodes, key=lambda n: (haversine_distance(p, net.nodes[n]), n))


@dataclass(frozen=True)
class TracedPathSet:
    origin: int
    budget: float
    edges: frozenset[str]
    frontier_distances: Mapping[int, float] = field(default_factory=dict)

    def edge_distance(self, net: RoadNetwork, edge_id: str) -> float:
        """Network distance from the origin to the edge's nearer endpoint."""
        e = net.edges[edge_id]
        d = self.frontier_distances
        return min(d.get(e.u, math.inf), d.get(e.v, math.inf))

    def to_geojson(self, net: RoadNetwork, poi_id: str | None = None) -> dict:
        feats = []
        for eid in sorted(self.edges):
            e = net.edges[eid]
            props = {
                "edge_id": eid,
                "road_type": e.road_type.value,
                "length_m": e.length,
                "distance_m": self.edge_distance(net, eid),
                "origin": self.origin,
                "budget_m": self.budget,
            }
            if poi_id is not None:
                props["poi_id"] = poi_id
            feats.append({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": e.geometry.to_lonlat()},
                "properties": props,
            })
        return {"type": "FeatureCollection", "features": feats}


def trace_paths(net: RoadNetwork, origin: int, budget: float = DEFAULT_BUDGET_M) -> TracedPathSet:
    """All edges with at least one endpoint within ``budget`` meters of ``origin``.

    Distances are shortest network distances, so the result does not depend
    on traversal order and cycles never duplicate an edge.  Edges are kept
    whole; nothing is clipped at the budget.
    """
    if origin not in net.nodes:
        raise ValidationError(f"origin node {origin!r} not in network")
    if not budget > 0:
        raise ValidationError(f"budget must be positive, got {budget}")

    adj = net.adjacency
    dist: dict[int, float] = {origin: 0.0}
    done: set[int] = set()
    heap = [(0.0, origin)]
    while heap:
        d, n = heapq.heappop(heap)
        if n in done:
            continue
        if d > budget:
            break
        done.add(n)
        for _, m, w in adj[n]:
            nd = d + w
            if nd < dist.get(m, math.inf):
                dist[m] = nd
                heapq.heappush(heap, (nd, m))

    reached = {n: dist[n] for n in done}
    edges = frozenset(eid for n in reached for eid, _, _ in adj[n])
    return TracedPathSet(origin, budget, edges, reached)
