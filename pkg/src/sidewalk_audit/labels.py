"""India-adapted label taxonomy, label export parsing and severity weights."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping, TextIO

from .errors import SchemaError, ValidationError
from .geo import GeoPoint

log = logging.getLogger(__name__)

SEVERITY_WEIGHTS: Mapping[int, float] = {1: 0.2, 2: 0.6, 3: 1.0}

LABEL_COLUMNS = ("label_id", "segment_id", "label_type", "severity", "tags", "lat", "lon", "pano_id")
TAG_DELIMITER = ";"


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


def severity_weight(severity: int) -> float:
    """0.2 / 0.6 / 1.0 for severity 1 / 2 / 3; higher means worse."""
    if isinstance(severity, bool) or severity not in SEVERITY_WEIGHTS:
        raise ValidationError(f"severity must be 1, 2 or 3, got {severity!r}")
    return SEVERITY_WEIGHTS[severity]


@dataclass(frozen=True)
class LabelType:
    name: str
    display: str
    polarity: Polarity
    allowed_tags: frozenset[str]
    removed_tags: frozenset[str] = frozenset()


def _normalize_name(name: str) -> str:
    return "".join(name.split()).lower()


class Taxonomy:
    """Label types keyed by canonical name; lookups also accept display names."""

    def __init__(self, label_types: list[LabelType], version: str = "") -> None:
        self.version = version
        self._types = {lt.name: lt for lt in label_types}
        self._alias: dict[str, str] = {}
        for lt in label_types:
            for alias in (lt.name, lt.display):
                key = _normalize_name(alias)
                if self._alias.get(key, lt.name) != lt.name:
                    raise SchemaError(f"label name {alias!r} is ambiguous")
                self._alias[key] = lt.name

    def get(self, name: str) -> LabelType | None:
        canonical = self._alias.get(_normalize_name(name))
        return None if canonical is None else self._types[canonical]

    def __getitem__(self, name: str) -> LabelType:
        lt = self.get(name)
        if lt is None:
            raise KeyError(name)
        return lt

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and self.get(name) is not None

    def __iter__(self) -> Iterator[LabelType]:
        return iter(self._types.values())

    def __len__(self) -> int:
        return len(self._types)

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": self.version,
            "label_types": {
                lt.name: {
                    "display": lt.display,
                    "polarity": lt.polarity.value,
                    "tags": sorted(lt.allowed_tags),
                    "removed_tags": sorted(lt.removed_tags),
                }
                for lt in self
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> Taxonomy:
        types = doc.get("label_types")
        if not isinstance(types, Mapping) or not types:
            raise SchemaError("taxonomy needs a non-empty 'label_types' object")
        out = []
        for name, spec in types.items():
            try:
                polarity = Polarity(spec.get("polarity"))
            except ValueError:
                raise SchemaError(f"{name}: unknown polarity {spec.get('polarity')!r}") from None
            tags = list(spec.get("tags", []))
            removed = list(spec.get("removed_tags", []))
            for kind, seq in (("tag", tags), ("removed tag", removed)):
                dupes = sorted({t for t in seq if seq.count(t) > 1})
                if dupes:
                    raise SchemaError(f"{name}: duplicate {kind}(s) {dupes}")
            clash = sorted(set(tags) & set(removed))
            if clash:
                raise SchemaError(f"{name}: tags both allowed and removed: {clash}")
            out.append(LabelType(name, spec.get("display", name), polarity, frozenset(tags), frozenset(removed)))
        return cls(out, str(doc.get("version", "")))


def _reject_duplicate_keys(pairs):
    seen = {}
    for k, v in pairs:
        if k in seen:
            raise SchemaError(f"duplicate key {k!r} in taxonomy file")
        seen[k] = v
    return seen


def load_taxonomy(path: str | Path | None = None) -> Taxonomy:
    """Load a label schema file; the bundled India schema when ``path`` is None."""
    if path is None:
        text = resources.files("sidewalk_audit.data").joinpath("label_schema.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"taxonomy is not valid JSON: {exc}") from exc
    return Taxonomy.from_dict(doc)


@lru_cache(maxsize=1)
def default_taxonomy() -> Taxonomy:
    return load_taxonomy()


@dataclass(frozen=True)
class SegmentLabel:
    label_id: str
    segment_id: str
    label_type: str
    severity: int
    tags: frozenset[str]
    location: GeoPoint
    pano_id: str

    def __post_init__(self) -> None:
        severity_weight(self.severity)
        object.__setattr__(self, "tags", frozenset(self.tags))


@dataclass(frozen=True)
class RowError:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


def _parse_row(row: Mapping[str, str], taxonomy: Taxonomy) -> SegmentLabel:
    lt = taxonomy.get(row["label_type"] or "")
    if lt is None:
        raise ValidationError(f"unknown label_type {row['label_type']!r}")
    raw_sev = (row["severity"] or "").strip()
    if not raw_sev.lstrip("-").isdigit():
        raise ValidationError(f"severity {raw_sev!r} is not an integer")
    severity = int(raw_sev)
    severity_weight(severity)
    tags = frozenset(t.strip() for t in (row["tags"] or "").split(TAG_DELIMITER) if t.strip())
    for tag in sorted(tags):
        if tag not in lt.allowed_tags:
            why = "removed for this deployment" if tag in lt.removed_tags else "not allowed"
            raise ValidationError(f"tag {tag!r} {why} for {lt.name}")
    try:
        location = GeoPoint(float(row["lat"]), float(row["lon"]))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad coordinates: {exc}") from None
    label_id = (row["label_id"] or "").strip()
    segment_id = (row["segment_id"] or "").strip()
    if not label_id or not segment_id:
        raise ValidationError("label_id and segment_id are required")
    return SegmentLabel(label_id, segment_id, lt.name, severity, tags, location, (row["pano_id"] or "").strip())


def parse_labels(
    source: str | Path | TextIO,
    taxonomy: Taxonomy | None = None,
    rejects: list[RowError] | None = None,
) -> list[SegmentLabel]:
    """Parse a label export CSV, validating each row against ``taxonomy``.

    ``source`` may be a path, an open text file, or the CSV text itself.
    Invalid rows are skipped, logged, and appended to ``rejects`` (with their
    physical line number) when a list is supplied.  A file without a single
    valid row raises :class:`SchemaError`.
    """
    taxonomy = taxonomy or default_taxonomy()
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        with open(source, newline="", encoding="utf-8") as fh:
            return parse_labels(fh, taxonomy, rejects)
    fh = io.StringIO(source) if isinstance(source, str) else source

    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in LABEL_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"label file missing columns {missing}")

    labels: list[SegmentLabel] = []
    seen: set[str] = set()
    for row in reader:
        line = reader.line_num
        try:
            if None in row or any(row.get(c) is None for c in LABEL_COLUMNS):
                raise ValidationError("wrong number of fields")
            label = _parse_row(row, taxonomy)
            if label.label_id in seen:
                raise ValidationError(f"duplicate label_id {label.label_id!r}")
        except ValidationError as exc:
            err = RowError(line, str(exc))
            log.warning("rejected label row: %s", err)
            if rejects is not None:
                rejects.append(err)
            continue
        seen.add(label.label_id)
        labels.append(label)
    if not labels:
        raise SchemaError("label file contains no valid rows")
    return labels


def write_labels(labels: list[SegmentLabel], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(LABEL_COLUMNS)
    for lb in labels:
        w.writerow([lb.label_id, lb.segment_id, lb.label_type, lb.severity,
                    TAG_DELIMITER.join(sorted(lb.tags)), repr(lb.location.lat), repr(lb.location.lon), lb.pano_id])
