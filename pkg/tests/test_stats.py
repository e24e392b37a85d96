import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import mannwhitneyu

from avphon.errors import DataError
from avphon.stats import confidence_interval, mann_whitney_u


def enumerated_p(x, y):
    """Two-tailed p by relabelling every split of the pooled sample."""
    pooled = list(x) + list(y)
    n1 = len(x)

    def u_of(a, b):
        return sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in a for q in b)

    mu = n1 * len(y) / 2
    observed = abs(u_of(x, y) - mu)
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), n1):
        a = [pooled[i] for i in idx]
        b = [pooled[i] for i in range(len(pooled)) if i not in idx]
        total += 1
        hits += abs(u_of(a, b) - mu) >= observed - 1e-12
    return hits / total


def test_all_greater_ten_each():
    u, p = mann_whitney_u(np.arange(10) + 100.0, np.arange(10))
    assert u == 100
    assert p < 1e-3
    assert p == pytest.approx(2 / math.comb(20, 10))


def test_three_three():
    u, p = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert u in (0, 9)
    assert p == pytest.approx(0.1)


def test_identical_samples():
    x = [0.8, 0.81, 0.82, 0.83]
    u, p = mann_whitney_u(x, x)
    assert u == len(x) ** 2 / 2
    assert p == pytest.approx(1.0)


def test_empty():
    with pytest.raises(DataError):
        mann_whitney_u([], [1.0])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=6),
       st.lists(st.integers(0, 4), min_size=1, max_size=6))
@settings(max_examples=100, deadline=None)
def test_exact_with_ties_matches_enumeration(x, y):
    u, p = mann_whitney_u(x, y)
    assert u == sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in x for b in y)
    assert p == pytest.approx(enumerated_p(x, y), rel=1e-12)


@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**31))
@settings(max_examples=100, deadline=None)
def test_exact_matches_scipy_without_ties(n1, n2, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(n1), rng.standard_normal(n2)
    u, p = mann_whitney_u(x, y)
    ref = mannwhitneyu(x, y, alternative="two-sided", method="exact")
    assert u == ref.statistic
    assert p == pytest.approx(ref.pvalue, rel=1e-9)


def test_normal_approximation_matches_scipy():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal(30), rng.standard_normal(25) + 0.4
    x[:5] = y[:5]  # ties
    u, p = mann_whitney_u(x, y)
    ref = mannwhitneyu(x, y, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert u == ref.statistic
    assert p == pytest.approx(ref.pvalue, rel=1e-9)


def test_confidence_interval():
    mean, lo, hi = confidence_interval([1.0, 2.0, 3.0])
    assert mean == 2.0
    assert hi - mean == pytest.approx(1.959963984540054 * 1.0 / math.sqrt(3))
    assert confidence_interval([0.5]) == (0.5, 0.5, 0.5)
