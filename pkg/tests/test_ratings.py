import io
import itertools
import math
import random

import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps
from sklearn.metrics import cohen_kappa_score

import oracles
from sidewalk_audit.errors import SchemaError, ValidationError
from sidewalk_audit.ratings import (
    UNDEFINED,
    average_ranks,
    descriptive_stats,
    read_ratings_csv,
    spearman,
    weighted_kappa,
    write_stats_report,
)

SMALL = [list(v) for v in itertools.product((1, 2, 3), repeat=4)]


def test_descriptive_examples():
    d = descriptive_stats([5] * 7)
    assert (d.mean, d.sd, d.min, d.max, d.n) == (5, 0, 5, 5, 7)
    d = descriptive_stats([2, 4])
    assert d.mean == 3 and d.sd == pytest.approx(math.sqrt(2), abs=1e-15)
    assert math.isnan(descriptive_stats([3]).sd)
    with pytest.raises(ValidationError):
        descriptive_stats([])


def test_average_ranks_ties():
    assert list(average_ranks([10, 20, 10, 30])) == [1.5, 3.0, 1.5, 4.0]
    assert list(average_ranks([7, 7, 7])) == [2.0, 2.0, 2.0]


def test_spearman_examples():
    v = [1, 3, 2, 5, 4]
    assert spearman(v, v).rho == 1.0
    assert spearman(v, [-x for x in v]).rho == -1.0
    res = spearman([5, 5, 5], [1, 2, 3])
    assert res.rho is UNDEFINED and res.p is UNDEFINED and not res.defined
    assert str(res.rho) == "n/a"


def test_spearman_errors():
    with pytest.raises(ValidationError):
        spearman([1, 2, 3], [1, 2])
    with pytest.raises(ValidationError):
        spearman([1, 2], [2, 1])


def test_kappa_examples():
    v = [1, 2, 3, 4, 5, 3]
    assert weighted_kappa(v, v) == 1.0
    assert weighted_kappa([5] * 10, [5] * 10) == 0.0
    with pytest.raises(ValidationError):
        weighted_kappa([1, 6], [1, 2])
    with pytest.raises(ValidationError):
        weighted_kappa([1, 2], [1])


def test_exhaustive_small_vectors():
    for a in SMALL:
        for b in SMALL:
            ref = oracles.spearman_rho(a, b)
            got = spearman(a, b).rho
            if ref is None:
                assert got is UNDEFINED
            else:
                assert got == pytest.approx(ref, abs=1e-12)
            assert weighted_kappa(a, b, k=3) == pytest.approx(oracles.quadratic_kappa(a, b, 3), abs=1e-12)


def test_random_length_50_vectors():
    rng = random.Random(2024)
    for _ in range(1000):
        a = [rng.randint(1, 5) for _ in range(50)]
        b = [rng.randint(1, 5) for _ in range(50)]
        ref = oracles.spearman_rho(a, b)
        assert spearman(a, b).rho == pytest.approx(ref, abs=1e-12)
        assert weighted_kappa(a, b) == pytest.approx(oracles.quadratic_kappa(a, b, 5), abs=1e-12)


def test_p_value_and_kappa_against_library():
    rng = random.Random(5)
    for _ in range(50):
        a = [rng.randint(1, 5) for _ in range(50)]
        b = [min(5, max(1, x + rng.randint(-1, 1))) for x in a]
        ours = spearman(a, b)
        ref = sps.spearmanr(a, b)
        assert ours.rho == pytest.approx(ref.correlation, abs=1e-12)
        assert ours.p == pytest.approx(ref.pvalue, rel=1e-9)
        assert weighted_kappa(a, b) == pytest.approx(
            cohen_kappa_score(a, b, labels=[1, 2, 3, 4, 5], weights="quadratic"), abs=1e-12)


def test_exact_permutation_p():
    a, b = [1, 2, 3, 4, 5], [2, 1, 4, 3, 5]
    res = spearman(a, b, exact=True)
    rho = res.rho
    hits = sum(1 for perm in itertools.permutations(b) if abs(oracles.spearman_rho(a, list(perm))) >= abs(rho) - 1e-12)
    assert res.p == pytest.approx(hits / 120)
    with pytest.raises(ValidationError):
        spearman(list(range(9)), list(range(9)), exact=True)


vec = st.lists(st.integers(1, 5), min_size=3, max_size=30)


@given(vec, st.data())
def test_spearman_bounds_and_monotone_invariance(a, data):
    b = data.draw(st.lists(st.integers(1, 5), min_size=len(a), max_size=len(a)))
    res = spearman(a, b)
    if res.defined:
        assert -1.0 <= res.rho <= 1.0
        # strictly increasing transform of a; decreasing of b flips the sign
        t = spearman([x ** 3 + 7 for x in a], [-math.exp(y) for y in b])
        assert t.rho == pytest.approx(-res.rho, abs=1e-12)


@given(vec, st.data())
def test_kappa_bounds_symmetry_self(a, data):
    b = data.draw(st.lists(st.integers(1, 5), min_size=len(a), max_size=len(a)))
    k = weighted_kappa(a, b)
    assert -1.0 - 1e-12 <= k <= 1.0 + 1e-12
    assert weighted_kappa(b, a) == pytest.approx(k, abs=1e-12)
    if len(set(a)) > 1:
        assert weighted_kappa(a, a) == pytest.approx(1.0, abs=1e-12)


def test_read_ratings_validation():
    head = "criterion,rater,item,score\n"
    with pytest.raises(SchemaError, match="line 2"):
        read_ratings_csv(io.StringIO(head + "Relevance,R1,1,6\n"))
    with pytest.raises(SchemaError, match="duplicate"):
        read_ratings_csv(io.StringIO(head + "Relevance,R1,1,5\nRelevance,R1,1,4\n"))
    with pytest.raises(SchemaError, match="different item sets"):
        read_ratings_csv(io.StringIO(head + "Relevance,R1,1,5\nRelevance,R2,2,4\n"))
    with pytest.raises(SchemaError, match="empty"):
        read_ratings_csv(io.StringIO(head))
    with pytest.raises(SchemaError, match="columns"):
        read_ratings_csv(io.StringIO("a,b\n1,2\n"))


def test_report_marks_constant_pairs(tmp_path):
    rows = ["criterion,rater,item,score"]
    for item in range(1, 6):
        rows += [f"Relevance,R1,{item},5", f"Relevance,R2,{item},5", f"Relevance,R3,{item},{item}"]
    m = read_ratings_csv(io.StringIO("\n".join(rows) + "\n"))
    paths = write_stats_report(m, tmp_path)
    pairs = paths["pairs"].read_text().splitlines()
    assert pairs[0] == "criterion,pair,rho,p,kappa"
    assert pairs[1] == "Relevance,R1-R2,n/a,n/a,0.0"
    assert pairs[2].startswith("Relevance,R1-R3,n/a,n/a,")
    desc = paths["descriptive"].read_text().splitlines()
    assert desc[1].split(",")[-1] == "15"
