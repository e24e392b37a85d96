"""Replicate-level statistics: Mann-Whitney U and normal confidence intervals."""

import math

import numpy as np
from scipy.stats import norm, rankdata

from avphon.errors import DataError

EXACT_MAX_N = 10
Z95 = 1.959963984540054


def _exact_null_counts(doubled_ranks, n1):
    """ways[s] = number of size-n1 subsets whose doubled ranks sum to s."""
    total = int(sum(doubled_ranks))
    ways = np.zeros((n1 + 1, total + 1), dtype=object)
    ways[0, 0] = 1
    for r in doubled_ranks:
        r = int(r)
        for k in range(n1, 0, -1):
            ways[k, r:] = ways[k, r:] + ways[k - 1, : total + 1 - r]
    return ways[n1]


def mann_whitney_u(sample1, sample2, exact=None):
    """U statistic of ``sample1`` and its two-tailed p-value.

    U counts pairs with sample1 > sample2, ties as one half (midrank convention).
    The exact null distribution is enumerated when both samples have at most
    ten values; otherwise the tie-corrected normal approximation with
    continuity correction is used.
    """
    x = np.asarray(sample1, dtype=np.float64).ravel()
    y = np.asarray(sample2, dtype=np.float64).ravel()
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise DataError("Mann-Whitney U needs two non-empty samples")
    ranks = rankdata(np.concatenate([x, y]))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2)
    mu = n1 * n2 / 2
    if exact is None:
        exact = n1 <= EXACT_MAX_N and n2 <= EXACT_MAX_N
    if exact:
        doubled = np.rint(2 * ranks).astype(np.int64)
        ways = _exact_null_counts(doubled, n1)
        offset = n1 * (n1 + 1)  # doubled rank-sum of U = 0
        dev = abs(2 * u - 2 * mu)
        hit = 0
        for s, w in enumerate(ways):
            if w and abs((s - offset) - 2 * mu) >= dev - 1e-9:
                hit += w
        p = hit / math.comb(n1 + n2, n1)
        return u, float(min(1.0, p))
    n = n1 + n2
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    var = n1 * n2 / 12 * ((n + 1) - tie_term)
    if var <= 0:
        return u, 1.0
    z = (abs(u - mu) - 0.5) / math.sqrt(var)
    return u, float(min(1.0, 2 * norm.sf(max(z, 0.0))))


def confidence_interval(values, z=Z95):
    """Mean and normal-approximation interval ``mean +/- z * sd / sqrt(n)``."""
    v = np.asarray(values, dtype=np.float64)
    if len(v) == 0:
        raise DataError("no values for a confidence interval")
    mean = float(v.mean())
    if len(v) < 2:
        return mean, mean, mean
    half = z * float(v.std(ddof=1)) / math.sqrt(len(v))
    return mean, mean - half, mean + half
