"""Wilcoxon rank-sum test (two-sided), exact for small samples."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

EXACT_LIMIT = 10
ALPHA = 0.05


@dataclass
class ComparisonReport:
    label_a: str
    label_b: str
    samples_a: list[float]
    samples_b: list[float]
    statistic: float  # rank sum of sample a
    p_value: float
    method: str
    degenerate: bool = False
    alpha: float = ALPHA

    @property
    def equivalent(self) -> bool:
        return self.p_value >= self.alpha

    @property
    def verdict(self) -> str:
        return "equivalent" if self.equivalent else "different"


def _exact_rank_sum_counts(doubled_ranks: np.ndarray, n: int) -> dict[int, int]:
    """Number of size-n subsets of the pooled ranks achieving each doubled rank sum.

    Counts subsets by dynamic programming over the pooled observations;
    ranks are doubled so mid-ranks stay integral.
    """
    # table[k] maps a doubled sum to the number of k-subsets reaching it.
    table: list[dict[int, int]] = [dict() for _ in range(n + 1)]
    table[0][0] = 1
    for r in doubled_ranks:
        r = int(r)
        for k in range(min(n, len(doubled_ranks)), 0, -1):
            prev = table[k - 1]
            if not prev:
                continue
            cur = table[k]
            for s, c in prev.items():
                cur[s + r] = cur.get(s + r, 0) + c
    return table[n]


def _exact_p(doubled_ranks: np.ndarray, n: int, observed2: int) -> float:
    counts = _exact_rank_sum_counts(doubled_ranks, n)
    total = math.comb(len(doubled_ranks), n)
    mean2 = n * (len(doubled_ranks) + 1)  # doubled expectation of the rank sum
    dev = abs(observed2 - mean2)
    hits = sum(c for s, c in counts.items() if abs(s - mean2) >= dev)
    return min(1.0, hits / total)


def _normal_p(ranks: np.ndarray, n: int, m: int, rank_sum: float) -> float:
    big_n = n + m
    mean = n * (big_n + 1) / 2
    _, tie_counts = np.unique(ranks, return_counts=True)
    ties = float(((tie_counts ** 3) - tie_counts).sum())
    var = n * m / 12 * ((big_n + 1) - ties / (big_n * (big_n - 1)))
    if var <= 0:
        return 1.0
    z = max(abs(rank_sum - mean) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, math.erfc(z / math.sqrt(2)))


def wilcoxon_rank_sum(a, b, label_a: str = "a", label_b: str = "b", alpha: float = ALPHA) -> ComparisonReport:
    """Two-sided rank-sum test of ``a`` against ``b``.

    Exact (enumerating every rank assignment, mid-ranks for ties) when both
    groups have at most 10 observations; otherwise the normal approximation
    with tie and continuity corrections.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    n, m = len(a), len(b)
    if n < 3 or m < 3:
        raise ValueError("each sample needs at least 3 observations")
    pooled = np.array(a + b)
    ranks = rankdata(pooled)
    rank_sum = float(ranks[:n].sum())
    if np.all(pooled == pooled[0]):
        return ComparisonReport(label_a, label_b, a, b, rank_sum, 1.0, "degenerate", True, alpha)
    if n <= EXACT_LIMIT and m <= EXACT_LIMIT:
        doubled = np.rint(2 * ranks).astype(int)
        p = _exact_p(doubled, n, int(doubled[:n].sum()))
        method = "exact"
    else:
        p = _normal_p(ranks, n, m, rank_sum)
        method = "normal"
    return ComparisonReport(label_a, label_b, a, b, rank_sum, p, method, False, alpha)
