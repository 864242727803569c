import math
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concreteness.metrics import best_of, correlate, edit_distance, edit_similarity


# --- independent oracles -----------------------------------------------------

def dp_edit_distance(x: str, y: str) -> int:
    """Full-table Wagner-Fischer dynamic program (the reference oracle)."""
    n, m = len(x), len(y)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if x[i - 1] == y[j - 1] else 1
            table[i][j] = min(table[i - 1][j] + 1,
                              table[i][j - 1] + 1,
                              table[i - 1][j - 1] + cost)
    return table[n][m]


def brute_kendall_taub(x, y) -> float:
    """Pair enumeration over all C(n,2) pairs with tie correction."""
    n = len(x)
    concordant = discordant = 0
    for i in range(n):
        for j in range(i + 1, n):
            s = (x[i] - x[j]) * (y[i] - y[j])
            if s > 0:
                concordant += 1
            elif s < 0:
                discordant += 1
    n0 = n * (n - 1) / 2
    n1 = sum(c * (c - 1) / 2 for c in Counter(x).values())
    n2 = sum(c * (c - 1) / 2 for c in Counter(y).values())
    return (concordant - discordant) / math.sqrt((n0 - n1) * (n0 - n2))


def average_ranks(values) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def brute_pearson(x, y) -> float:
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / math.sqrt(vx * vy)


def brute_spearman(x, y) -> float:
    return brute_pearson(average_ranks(x), average_ranks(y))


# --- edit distance ------------------------------------------------------------

def test_edit_distance_identity():
    assert edit_distance("abc", "abc") == 0


def test_edit_distance_full_deletion():
    assert edit_distance("abc", "") == 3
    assert edit_distance("", "abc") == 3


def test_edit_distance_kitten_sitting():
    assert dp_edit_distance("kitten", "sitting") == 3
    assert edit_distance("kitten", "sitting") == 3


def test_edit_distance_empty_both():
    assert edit_distance("", "") == 0


@given(st.text(max_size=40), st.text(max_size=40))
def test_edit_distance_matches_oracle(x, y):
    assert edit_distance(x, y) == dp_edit_distance(x, y)


@given(st.text(max_size=15), st.text(max_size=15))
def test_edit_distance_symmetry(x, y):
    assert edit_distance(x, y) == edit_distance(y, x)


@settings(max_examples=60)
@given(st.text(max_size=12), st.text(max_size=12), st.text(max_size=12))
def test_edit_distance_triangle_inequality(x, y, z):
    assert edit_distance(x, z) <= edit_distance(x, y) + edit_distance(y, z)


def test_edit_distance_unicode_scalars():
    # astral-plane characters count as single scalar values
    assert edit_distance("\U0001F604", "\U0001F626") == 1
    assert edit_distance("á", "a") == 1  # combining accent is its own scalar


# --- edit similarity ----------------------------------------------------------

def test_edit_similarity_identity():
    assert edit_similarity("abc", "abc") == 1.0


def test_edit_similarity_total_substitution():
    assert edit_similarity("abc", "xyz") == 0.0


def test_edit_similarity_kitten_sitting():
    assert edit_similarity("kitten", "sitting") == pytest.approx(1 - 3 / 7)


def test_edit_similarity_both_empty_rejected():
    with pytest.raises(ValueError):
        edit_similarity("", "")


@given(st.text(max_size=20), st.text(max_size=20))
def test_edit_similarity_one_iff_equal(x, y):
    if not x and not y:
        return
    sim = edit_similarity(x, y)
    assert 0.0 <= sim <= 1.0
    assert (sim == 1.0) == (x == y)


# --- best_of ------------------------------------------------------------------

def test_best_of_exact_match_wins():
    assert best_of("a dog", ["a dog", "a cat"]) == (0, 1.0)


def test_best_of_tie_breaks_to_lowest_index():
    idx, sim = best_of("a dog", ["a cog", "a cog", "a cog"])
    assert idx == 0
    assert sim == edit_similarity("a dog", "a cog")


def test_best_of_enumerated():
    sims = [edit_similarity("abc", c) for c in ["abd", "xbc", "abc"]]
    assert max(range(3), key=lambda i: sims[i]) == 2
    assert best_of("abc", ["abd", "xbc", "abc"]) == (2, 1.0)


def test_best_of_empty_candidates_rejected():
    with pytest.raises(ValueError):
        best_of("abc", [])


# --- correlate ----------------------------------------------------------------

def test_correlate_identity():
    report = correlate([1, 2, 3, 4], [1, 2, 3, 4])
    assert report.pearson == pytest.approx(1.0, abs=1e-12)
    assert report.spearman == pytest.approx(1.0, abs=1e-12)
    assert report.kendall == pytest.approx(1.0, abs=1e-12)
    assert report.n == 4


def test_correlate_reversal():
    report = correlate([1, 2, 3, 4], [4, 3, 2, 1])
    assert report.pearson == pytest.approx(-1.0, abs=1e-12)
    assert report.spearman == pytest.approx(-1.0, abs=1e-12)
    assert report.kendall == pytest.approx(-1.0, abs=1e-12)


def test_correlate_kendall_with_ties_matches_pair_enumeration():
    x, y = [1, 2, 2, 3], [1, 3, 2, 4]
    report = correlate(x, y)
    assert report.kendall == pytest.approx(brute_kendall_taub(x, y), abs=1e-12)


def test_correlate_rejects_bad_input():
    with pytest.raises(ValueError):
        correlate([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        correlate([1], [2])
    with pytest.raises(ValueError):
        correlate([1, 1, 1], [1, 2, 3])  # zero variance
    with pytest.raises(ValueError):
        correlate([1, 2, 3], [1, float("nan"), 3])


def test_correlate_matches_brute_force_with_ties():
    rng = random.Random(20240814)
    for _ in range(300):
        n = rng.randint(2, 12)
        x = [rng.randint(0, 4) for _ in range(n)]
        y = [rng.randint(0, 4) for _ in range(n)]
        if len(set(x)) < 2 or len(set(y)) < 2:
            continue
        report = correlate(x, y)
        assert report.kendall == pytest.approx(brute_kendall_taub(x, y), abs=1e-12)
        assert report.spearman == pytest.approx(brute_spearman(x, y), abs=1e-12)
        assert report.pearson == pytest.approx(brute_pearson(x, y), abs=1e-12)


_grid_values = st.integers(-1000, 1000).map(lambda n: n / 10)


@settings(max_examples=60)
@given(st.lists(_grid_values, min_size=3, max_size=20), st.data())
def test_correlate_transform_invariance(x, data):
    if len(set(x)) < 2:
        return
    y = data.draw(st.lists(_grid_values, min_size=len(x), max_size=len(x)))
    if len(set(y)) < 2:
        return
    base = correlate(x, y)
    # strictly increasing affine transform preserves all three
    affine = [2.5 * v + 7 for v in x]
    shifted = correlate(affine, y)
    assert shifted.pearson == pytest.approx(base.pearson, abs=1e-9)
    assert shifted.spearman == pytest.approx(base.spearman, abs=1e-9)
    assert shifted.kendall == pytest.approx(base.kendall, abs=1e-9)
    # arbitrary strictly increasing transform preserves the rank coefficients
    monotone = [math.atan(v) + v / 50 for v in x]
    ranked = correlate(monotone, y)
    assert ranked.spearman == pytest.approx(base.spearman, abs=1e-9)
    assert ranked.kendall == pytest.approx(base.kendall, abs=1e-9)


def test_correlate_coefficients_within_bounds():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.normal(size=10)
        y = rng.normal(size=10)
        report = correlate(x, y)
        for value in (report.pearson, report.spearman, report.kendall):
            assert -1.0 <= value <= 1.0
