"""Segment, POI and across-sector accessibility scores.

Pipeline: labels -> signed severity contributions -> raw segment score ->
corpus normalization (winsorize negative tail, z-score, logistic) ->
length-weighted POI score -> POI-count-weighted category score.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .errors import ValidationError
from .geo import Polyline
from .labels import Polarity, SegmentLabel, Taxonomy, default_taxonomy, severity_weight

log = logging.getLogger(__name__)

# positive features score (ceiling - weight): severity 1 -> +1.0, severity 3 -> +0.2
POSITIVE_CEILING = 1.2
CLIP_PERCENTILE = 95.0
FINDINGS_MIN_SEVERITY = 2
RAW_DECIMALS = 12
UNASSIGNED = "unassigned"


class NoData(Enum):
    NO_DATA = "no data"

    def __str__(self) -> str:
        return self.value


NO_DATA = NoData.NO_DATA


def feature_contribution(label: SegmentLabel, taxonomy: Taxonomy | None = None) -> float:
    """Signed contribution of one label to its segment's raw score."""
    lt = (taxonomy or default_taxonomy())[label.label_type]
    w = severity_weight(label.severity)
    if lt.polarity is Polarity.NEGATIVE:
        return -w
    return POSITIVE_CEILING - w


@dataclass
class FeatureVector:
    segment_id: str
    entries: dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return math.fsum(self.entries.values())


def feature_vector(segment_id: str, labels: Iterable[SegmentLabel], taxonomy: Taxonomy | None = None) -> FeatureVector:
    fv = FeatureVector(segment_id)
    parts: dict[str, list[float]] = defaultdict(list)
    for lb in labels:
        if lb.segment_id != segment_id:
            raise ValidationError(f"label {lb.label_id!r} belongs to {lb.segment_id!r}, not {segment_id!r}")
        parts[lb.label_type].append(feature_contribution(lb, taxonomy))
    fv.entries = {k: math.fsum(v) for k, v in sorted(parts.items())}
    return fv


def raw_segment_score(labels: Sequence[SegmentLabel], taxonomy: Taxonomy | None = None) -> float:
    """Sum of signed contributions; 0 for an unlabeled segment.

    Contributions are multiples of 0.2, so the sum is rounded to 12 places
    to drop binary noise; otherwise a segment whose labels cancel could come
    out as -5e-17 and join the negative tail used for clipping.
    """
    if not labels:
        return 0.0
    ids = {lb.segment_id for lb in labels}
    if len(ids) > 1:
        raise ValidationError(f"labels span several segments: {sorted(ids)}")
    return round(math.fsum(feature_contribution(lb, taxonomy) for lb in labels), RAW_DECIMALS) + 0.0


def normalize_scores(raw: Mapping[str, float], clip_percentile: float = CLIP_PERCENTILE) -> dict[str, float]:
    """Map raw segment scores into (0, 1) over the whole corpus.

    1. Winsorize the negative tail: with T the ``clip_percentile`` percentile
       (linear interpolation) of the magnitudes of negative scores, every
       score below -T becomes -T.  Skipped when nothing is negative.
    2. Standardize to mean 0, population variance 1.  A constant corpus
       standardizes to all zeros.
    3. Logistic sigmoid.

    Every step is monotone, so the weak ordering of raw scores survives.
    """
    if not raw:
        raise ValidationError("cannot normalize an empty corpus")
    ids = list(raw)
    r = np.array([raw[k] for k in ids], dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValidationError("raw scores must be finite")

    neg = -r[r < 0]
    if neg.size:
        t = np.percentile(neg, clip_percentile)
        r = np.where(r < -t, -t, r)

    sd = r.std()
    # sd can underflow to 0 even when values differ (spreads near 1e-160)
    z = np.zeros_like(r) if r.max() == r.min() or sd == 0.0 else (r - r.mean()) / sd

    s = np.clip(expit(z), np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    return {k: float(v) for k, v in zip(ids, s)}


def _weighted_mean(values: Sequence[float], weights: Sequence[float], what: str) -> float:
    if len(values) != len(weights):
        raise ValidationError(f"{what}: {len(values)} scores but {len(weights)} weights")
    if not values:
        raise ValidationError(f"{what}: no inputs")
    total = math.fsum(weights)
    if not total > 0:
        raise ValidationError(f"{what}: total weight is zero")
    mean = math.fsum(v * w for v, w in zip(values, weights)) / total
    # clamp away rounding so the result stays a convex combination
    return min(max(mean, min(values)), max(values))


def poi_sec_score(scores: Sequence[float], lengths: Sequence[float]) -> float:
    """Length-weighted mean of segment scores around one POI."""
    if any(not (l > 0) for l in lengths):
        raise ValidationError("segment lengths must be positive")
    return _weighted_mean(list(scores), list(lengths), "poi_sec_score")


def poi_across_sector_score(
    groups: Mapping[str, Sequence[tuple[float, int]]],
    categories: Iterable[str] | None = None,
) -> dict[str, float | NoData]:
    """POI-count-weighted mean of POI-level scores for each category.

    ``groups`` maps category -> [(score, n_pois), ...], typically one entry
    per sector.  Categories listed in ``categories`` but absent from
    ``groups`` (or with zero POIs) come back as ``NO_DATA``.
    """
    wanted = list(groups) if categories is None else list(categories)
    out: dict[str, float | NoData] = {}
    for cat in wanted:
        pairs = [(s, n) for s, n in groups.get(cat, ()) if n > 0]
        if any(n < 0 for _, n in groups.get(cat, ())):
            raise ValidationError(f"{cat}: negative POI count")
        if not pairs:
            out[cat] = NO_DATA
            continue
        out[cat] = _weighted_mean([s for s, _ in pairs], [float(n) for _, n in pairs], cat)
    return out


def findings_count(labels: Iterable[SegmentLabel], min_severity: int = FINDINGS_MIN_SEVERITY) -> int:
    """Labels severe enough to flag as an improvement location."""
    return sum(1 for lb in labels if lb.severity >= min_severity)


@dataclass(frozen=True)
class PoiScore:
    score: float
    length: float
    category: str
    sector_id: str
    n_segments: int


@dataclass(frozen=True)
class GroupScore:
    score: float
    length: float
    n_pois: int


@dataclass(frozen=True)
class CategoryScore:
    score: float | NoData
    n_pois: int


@dataclass
class ScoreSet:
    raw: dict[str, float]
    seg: dict[str, float]
    seg_length: dict[str, float]
    poi: dict[str, PoiScore]
    sector_category: dict[tuple[str, str], GroupScore]
    across_sector: dict[str, CategoryScore]
    findings: int

    def to_dict(self) -> dict:
        return {
            "segments": {k: {"raw": self.raw[k], "score": self.seg[k], "length_m": self.seg_length[k]}
                         for k in self.seg},
            "pois": {k: {"score": v.score, "length_m": v.length, "category": v.category,
                         "sector_id": v.sector_id, "n_segments": v.n_segments} for k, v in self.poi.items()},
            "sector_category": [{"sector_id": s, "category": c, "score": g.score, "length_m": g.length,
                                 "n_pois": g.n_pois} for (s, c), g in self.sector_category.items()],
            "categories": {k: {"score": None if v.score is NO_DATA else v.score, "n_pois": v.n_pois}
                           for k, v in self.across_sector.items()},
            "findings": self.findings,
        }


def build_scoreset(
    labels: Iterable[SegmentLabel],
    segment_lengths: Mapping[str, float],
    poi_segments: Mapping[str, Iterable[str]],
    poi_info: Mapping[str, tuple[str, str | None]],
    categories: Sequence[str],
    taxonomy: Taxonomy | None = None,
    findings_min_severity: int = FINDINGS_MIN_SEVERITY,
    clip_percentile: float = CLIP_PERCENTILE,
) -> ScoreSet:
    """Score a corpus of audited segments and aggregate around POIs.

    ``segment_lengths`` defines the corpus (every audited segment, labeled or
    not).  ``poi_segments`` lists each POI's audited segments and
    ``poi_info`` its (category, sector).  Labels on segments outside the
    corpus are ignored.  A sector/category cell is the length-weighted mean
    of its POIs' scores; the category score weights each sector's cell by
    its POI count.
    """
    if not segment_lengths:
        raise ValidationError("no audited segments to score")
    by_seg: dict[str, list[SegmentLabel]] = defaultdict(list)
    stray = 0
    for lb in labels:
        if lb.segment_id in segment_lengths:
            by_seg[lb.segment_id].append(lb)
        else:
            stray += 1
    if stray:
        log.warning("%d label(s) fall on segments outside the audited corpus and were ignored", stray)

    seg_ids = sorted(segment_lengths)
    raw = {sid: raw_segment_score(by_seg.get(sid, []), taxonomy) for sid in seg_ids}
    seg = normalize_scores(raw, clip_percentile)

    poi: dict[str, PoiScore] = {}
    for pid in sorted(poi_segments):
        sids = sorted(set(poi_segments[pid]) & set(segment_lengths))
        if not sids:
            log.warning("POI %s has no audited segments; left unscored", pid)
            continue
        lengths = [segment_lengths[s] for s in sids]
        category, sector = poi_info[pid]
        poi[pid] = PoiScore(poi_sec_score([seg[s] for s in sids], lengths), math.fsum(lengths),
                            category, sector or UNASSIGNED, len(sids))

    cells: dict[tuple[str, str], list[PoiScore]] = defaultdict(list)
    for p in poi.values():
        cells[(p.sector_id, p.category)].append(p)
    sector_category = {
        key: GroupScore(_weighted_mean([p.score for p in ps], [p.length for p in ps], f"{key}"),
                        math.fsum(p.length for p in ps), len(ps))
        for key, ps in sorted(cells.items())
    }

    groups: dict[str, list[tuple[float, int]]] = defaultdict(list)
    for (_, cat), g in sector_category.items():
        groups[cat].append((g.score, g.n_pois))
    across = poi_across_sector_score(groups, categories)
    across_sector = {cat: CategoryScore(across[cat], sum(n for _, n in groups.get(cat, ())))
                     for cat in categories}

    corpus_labels = [lb for sid in seg_ids for lb in by_seg.get(sid, [])]
    return ScoreSet(raw, seg, {s: float(segment_lengths[s]) for s in seg_ids}, poi, sector_category,
                    across_sector, findings_count(corpus_labels, findings_min_severity))


SUMMARY_COLUMNS = ("level", "id", "score", "weight", "sector_id")


def _fmt(x: float | NoData) -> str:
    return str(x) if isinstance(x, NoData) else repr(float(x))


def emit_reports(
    scores: ScoreSet,
    geometries: Mapping[str, Polyline],
    out_dir: str | Path,
    segment_sectors: Mapping[str, str] | None = None,
) -> dict[str, Path]:
    """Write the SegScore heatmap GeoJSON, summary CSV, sector/category CSV and findings JSON.

    Scores run from 0 (least accessible) to 1 (most accessible).  Output is
    byte-for-byte deterministic for a given ScoreSet.
    """
    if not scores.seg:
        raise ValidationError("empty ScoreSet")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    segment_sectors = segment_sectors or {}

    feats = []
    for sid in sorted(scores.seg):
        geom = geometries.get(sid)
        if geom is None:
            log.warning("segment %s has no geometry; emitted without one", sid)
        feats.append({
            "type": "Feature",
            "geometry": None if geom is None else {"type": "LineString", "coordinates": geom.to_lonlat()},
            "properties": {"segment_id": sid, "seg_score": scores.seg[sid], "raw_score": scores.raw[sid],
                           "length_m": scores.seg_length[sid]},
        })
    paths = {
        "heatmap": out / "segscore_heatmap.geojson",
        "summary": out / "summary.csv",
        "sector_category": out / "sector_category.csv",
        "findings": out / "findings.json",
    }
    paths["heatmap"].write_text(json.dumps({"type": "FeatureCollection", "features": feats}, indent=1) + "\n",
                                encoding="utf-8")

    with open(paths["summary"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for sid in sorted(scores.seg):
            w.writerow(["segment", sid, _fmt(scores.seg[sid]), _fmt(scores.seg_length[sid]),
                        segment_sectors.get(sid, "")])
        for pid in sorted(scores.poi):
            p = scores.poi[pid]
            w.writerow(["poi", pid, _fmt(p.score), _fmt(p.length), p.sector_id])
        for cat, c in scores.across_sector.items():
            w.writerow(["category", cat, _fmt(c.score), str(c.n_pois), ""])

    with open(paths["sector_category"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sector_id", "category", "score", "length_m", "n_pois"))
        for (sector, cat), g in scores.sector_category.items():
            w.writerow([sector, cat, _fmt(g.score), _fmt(g.length), g.n_pois])

    paths["findings"].write_text(json.dumps({"findings": scores.findings}) + "\n", encoding="utf-8")
    return paths
