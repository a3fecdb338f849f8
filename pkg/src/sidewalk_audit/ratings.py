"""Inter-rater statistics for guidance evaluation: descriptives, Spearman rho, weighted kappa."""

from __future__ import annotations

import csv
import itertools
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np
from scipy import stats

from .errors import SchemaError, ValidationError

CRITERIA = ("Relevance", "Accuracy", "Usefulness")
LIKERT_MAX = 5
EXACT_P_MAX_N = 8


class Undefined(Enum):
    UNDEFINED = "n/a"

    def __str__(self) -> str:
        return self.value


UNDEFINED = Undefined.UNDEFINED


@dataclass(frozen=True)
class Descriptive:
    mean: float
    sd: float
    min: int
    max: int
    n: int


def descriptive_stats(values: Sequence[int]) -> Descriptive:
    """Mean, sample SD (n - 1), min, max and count; SD is nan for a single value."""
    vals = list(values)
    if not vals:
        raise ValidationError("no ratings")
    sd = statistics.stdev(vals) if len(vals) > 1 else math.nan
    return Descriptive(statistics.fmean(vals), sd, min(vals), max(vals), len(vals))


def average_ranks(values: Sequence[float]) -> np.ndarray:
    """1-based ranks with ties sharing their mean rank."""
    x = np.asarray(values, dtype=float)
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x), dtype=float)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


@dataclass(frozen=True)
class SpearmanResult:
    rho: float | Undefined
    p: float | Undefined

    @property
    def defined(self) -> bool:
        return self.rho is not UNDEFINED


def _rank_corr(ra: np.ndarray, rb: np.ndarray) -> float:
    a = ra - ra.mean()
    b = rb - rb.mean()
    rho = float(np.dot(a, b) / math.sqrt(float(np.dot(a, a)) * float(np.dot(b, b))))
    return min(1.0, max(-1.0, rho))


def spearman(r1: Sequence[float], r2: Sequence[float], exact: bool = False) -> SpearmanResult:
    """Spearman rho with a two-sided p-value.

    p comes from the t approximation with n - 2 degrees of freedom, or from
    full permutation enumeration when ``exact`` (n <= 8).  A constant input
    makes rho undefined.
    """
    if len(r1) != len(r2):
        raise ValidationError(f"length mismatch: {len(r1)} vs {len(r2)}")
    n = len(r1)
    if n < 3:
        raise ValidationError("need at least 3 paired ratings")
    ra, rb = average_ranks(r1), average_ranks(r2)
    if np.all(ra == ra[0]) or np.all(rb == rb[0]):
        return SpearmanResult(UNDEFINED, UNDEFINED)
    rho = _rank_corr(ra, rb)

    if exact:
        if n > EXACT_P_MAX_N:
            raise ValidationError(f"exact p only supported for n <= {EXACT_P_MAX_N}")
        hits = total = 0
        for perm in itertools.permutations(rb):
            total += 1
            if abs(_rank_corr(ra, np.array(perm))) >= abs(rho) - 1e-12:
                hits += 1
        return SpearmanResult(rho, hits / total)

    if abs(rho) >= 1.0:
        return SpearmanResult(rho, 0.0)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return SpearmanResult(rho, float(2.0 * stats.t.sf(abs(t), n - 2)))


def weighted_kappa(r1: Sequence[int], r2: Sequence[int], k: int = LIKERT_MAX) -> float:
    """Quadratic-weighted Cohen's kappa on a 1..k ordinal scale.

    When the expected weighted disagreement is zero (both raters constant
    on the same category) kappa is reported as 0.
    """
    if len(r1) != len(r2):
        raise ValidationError(f"length mismatch: {len(r1)} vs {len(r2)}")
    if not r1:
        raise ValidationError("no ratings")
    for v in (*r1, *r2):
        if isinstance(v, bool) or int(v) != v or not 1 <= v <= k:
            raise ValidationError(f"rating {v!r} outside 1..{k}")
    n = len(r1)
    observed = np.zeros((k, k))
    for a, b in zip(r1, r2):
        observed[int(a) - 1, int(b) - 1] += 1.0
    observed /= n
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0))
    idx = np.arange(k)
    w = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    den = float((w * expected).sum())
    if den == 0.0:
        return 0.0
    return 1.0 - float((w * observed).sum()) / den


@dataclass
class RatingMatrix:
    """criterion -> rater -> item -> Likert score."""

    scores: dict[str, dict[str, dict[str, int]]]

    @property
    def criteria(self) -> list[str]:
        known = [c for c in CRITERIA if c in self.scores]
        return known + sorted(c for c in self.scores if c not in CRITERIA)

    def raters(self, criterion: str) -> list[str]:
        return sorted(self.scores[criterion])

    def items(self, criterion: str) -> list[str]:
        first = next(iter(self.scores[criterion].values()))
        return sorted(first, key=_natural_key)

    def vector(self, criterion: str, rater: str) -> list[int]:
        row = self.scores[criterion][rater]
        return [row[i] for i in self.items(criterion)]

    def values(self, criterion: str) -> list[int]:
        return [v for r in self.raters(criterion) for v in self.vector(criterion, r)]

    def validate(self) -> None:
        for crit, by_rater in self.scores.items():
            item_sets = {frozenset(items) for items in by_rater.values()}
            if len(item_sets) != 1:
                raise SchemaError(f"{crit}: raters scored different item sets")


def _natural_key(item: str) -> tuple[int, int, str]:
    return (0, int(item), "") if item.isdigit() else (1, 0, item)


RATING_COLUMNS = ("criterion", "rater", "item", "score")


def read_ratings_csv(fh: TextIO) -> RatingMatrix:
    reader = csv.DictReader(fh)
    if list(reader.fieldnames or []) != list(RATING_COLUMNS):
        raise SchemaError(f"ratings file must have columns {RATING_COLUMNS}")
    scores: dict[str, dict[str, dict[str, int]]] = defaultdict(lambda: defaultdict(dict))
    for row in reader:
        line = reader.line_num
        try:
            score = int(row["score"])
        except (TypeError, ValueError):
            raise SchemaError(f"line {line}: score {row['score']!r} is not an integer") from None
        if not 1 <= score <= LIKERT_MAX:
            raise SchemaError(f"line {line}: score {score} outside 1..{LIKERT_MAX}")
        cell = scores[row["criterion"]][row["rater"]]
        if row["item"] in cell:
            raise SchemaError(f"line {line}: duplicate rating for {row['criterion']}/{row['rater']}/{row['item']}")
        cell[row["item"]] = score
    if not scores:
        raise SchemaError("ratings file is empty")
    m = RatingMatrix({c: dict(r) for c, r in scores.items()})
    m.validate()
    return m


def _fmt(x: float | Undefined) -> str:
    return str(x) if isinstance(x, Undefined) else repr(float(x))


def write_stats_report(m: RatingMatrix, out_dir: str | Path) -> dict[str, Path]:
    """Descriptive table (criterion, mean, sd, min, max, n) and pairwise table (criterion, pair, rho, p, kappa)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"descriptive": out / "rating_descriptive.csv", "pairs": out / "rating_pairs.csv"}
    with open(paths["descriptive"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("criterion", "mean", "sd", "min", "max", "n"))
        for crit in m.criteria:
            d = descriptive_stats(m.values(crit))
            w.writerow([crit, _fmt(d.mean), _fmt(d.sd), d.min, d.max, d.n])
    with open(paths["pairs"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("criterion", "pair", "rho", "p", "kappa"))
        for crit in m.criteria:
            for a, b in itertools.combinations(m.raters(crit), 2):
                va, vb = m.vector(crit, a), m.vector(crit, b)
                sp = spearman(va, vb)
                w.writerow([crit, f"{a}-{b}", _fmt(sp.rho), _fmt(sp.p), _fmt(weighted_kappa(va, vb))])
    return paths
