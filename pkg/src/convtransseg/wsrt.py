"""Wilcoxon signed-rank test for paired samples.

Zero differences are dropped, ties get average ranks. For n <= 20 the
two-sided p-value comes from the exact null distribution of the positive
rank sum (dynamic program on doubled ranks so half-integer average ranks
stay on an integer lattice); for larger n a normal approximation with
continuity correction and tie-corrected variance is used.

Two-sided convention: p = min(1, 2 * min(P(W <= w), P(W >= w))). The null
distribution is symmetric, so this equals the mirrored tail sum.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InsufficientDataError, UsageError

__all__ = ["wsrt", "rank_with_ties", "exact_positive_rank_distribution", "exact_p", "approx_p"]

EXACT_LIMIT = 20
MIN_NONZERO = 5


def rank_with_ties(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the average rank of the group."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def exact_positive_rank_distribution(double_ranks: np.ndarray) -> np.ndarray:
    """PMF of 2*W+ over sign flips; index = doubled rank sum, value = probability."""
    total = int(double_ranks.sum())
    pmf = np.zeros(total + 1, dtype=np.float64)
    pmf[0] = 1.0
    for r in double_ranks:
        r = int(r)
        shifted = np.zeros_like(pmf)
        shifted[r:] = pmf[: total + 1 - r]
        pmf = 0.5 * (pmf + shifted)
    return pmf


def exact_p(ranks: np.ndarray, w_pos: float) -> float:
    double_ranks = np.round(2.0 * ranks).astype(np.int64)
    pmf = exact_positive_rank_distribution(double_ranks)
    w2 = int(round(2.0 * w_pos))
    lower = float(pmf[: w2 + 1].sum())
    upper = float(pmf[w2:].sum())
    return min(1.0, 2.0 * min(lower, upper))


def approx_p(mags: np.ndarray, w_pos: float) -> float:
    """Normal approximation with continuity correction and tie-corrected variance."""
    n = len(mags)
    mean = n * (n + 1) / 4.0
    _, counts = np.unique(mags, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float((counts**3 - counts).sum()) / 48.0
    diff = w_pos - mean
    cc = 0.5 * np.sign(diff)
    z = (diff - cc) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return min(1.0, p)


def _prepare(a, b) -> tuple[np.ndarray, np.ndarray, float]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise UsageError(f"wsrt needs two equal-length 1-d sequences, got {a.shape} and {b.shape}")
    d = a - b
    d = d[d != 0.0]
    n = len(d)
    if n < MIN_NONZERO:
        raise InsufficientDataError(
            f"wsrt needs at least {MIN_NONZERO} nonzero differences, got {n}"
        )
    mags = np.abs(d)
    ranks = rank_with_ties(mags)
    w_pos = float(ranks[d > 0].sum())
    return mags, ranks, w_pos


def wsrt(a, b, paired: bool = True) -> float:
    """Two-sided p-value for paired sequences a, b."""
    if not paired:
        raise UsageError("only the paired signed-rank form is provided")
    mags, ranks, w_pos = _prepare(a, b)
    if len(mags) <= EXACT_LIMIT:
        return exact_p(ranks, w_pos)
    return approx_p(mags, w_pos)
