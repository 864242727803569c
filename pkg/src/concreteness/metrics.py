"""Text-similarity primitives and the correlation suite used for evaluation.

Edit distance operates on unicode scalar values (Python ``str`` iteration),
so results are deterministic across platforms regardless of how the text
would tokenize or render.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats


def edit_distance(x: str, y: str) -> int:
    """Levenshtein distance: minimum insertions, deletions, substitutions.

    Two-row dynamic program over the shorter string, with common prefix and
    suffix trimmed first; O(min(|x|,|y|)) memory.
    """
    if x == y:
        return 0
    n, m = len(x), len(y)
    # shared prefix/suffix never participates in an optimal edit script
    i = 0
    while i < n and i < m and x[i] == y[i]:
        i += 1
    j = 0
    while j < n - i and j < m - i and x[n - 1 - j] == y[m - 1 - j]:
        j += 1
    x, y = x[i:n - j], y[i:m - j]
    if not x:
        return len(y)
    if not y:
        return len(x)
    if len(x) < len(y):
        x, y = y, x

    previous = list(range(len(y) + 1))
    for row, cx in enumerate(x, start=1):
        current = [row] + [0] * len(y)
        for col, cy in enumerate(y, start=1):
            current[col] = min(
                previous[col] + 1,
                current[col - 1] + 1,
                previous[col - 1] + (cx != cy),
            )
        previous = current
    return previous[-1]


def edit_similarity(x: str, y: str) -> float:
    """Length-normalized edit similarity: 1 - dist/max(|x|, |y|), in [0, 1].

    Equals 1 iff the strings are identical. Both inputs empty is an error
    (no length to normalize by).
    """
    if not x and not y:
        raise ValueError("edit_similarity undefined for two empty strings")
    return 1.0 - edit_distance(x, y) / max(len(x), len(y))


def best_of(source: str, candidates: Sequence[str],
            sim: Callable[[str, str], float] = edit_similarity) -> tuple[int, float]:
    """Pick the candidate most similar to ``source``.

    Returns ``(index, similarity)``; ties break toward the lowest index.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    best_idx = 0
    best_sim = sim(source, candidates[0])
    for idx in range(1, len(candidates)):
        s = sim(source, candidates[idx])
        if s > best_sim:
            best_idx, best_sim = idx, s
    return best_idx, best_sim


@dataclass(frozen=True)
class CorrelationReport:
    """Pearson, Spearman (average ranks), and Kendall tau-b for one pairing."""

    pearson: float
    spearman: float
    kendall: float
    n: int


def correlate(x: Sequence[float], y: Sequence[float]) -> CorrelationReport:
    """Correlate two equal-length samples.

    Spearman uses average ranks for ties; Kendall is the tie-corrected tau-b.
    Raises ``ValueError`` on length mismatch, n < 2, non-finite values, or
    zero variance in either input.
    """
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.ndim != 1 or ya.ndim != 1 or xa.shape != ya.shape:
        raise ValueError(f"length mismatch: {xa.shape} vs {ya.shape}")
    n = int(xa.size)
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not (np.isfinite(xa).all() and np.isfinite(ya).all()):
        raise ValueError("inputs must be finite")
    if np.ptp(xa) == 0 or np.ptp(ya) == 0:
        raise ValueError("zero variance input")

    pearson = float(stats.pearsonr(xa, ya).statistic)
    spearman = float(stats.spearmanr(xa, ya).statistic)
    kendall = float(stats.kendalltau(xa, ya).statistic)
    clip = lambda v: min(1.0, max(-1.0, v))
    return CorrelationReport(clip(pearson), clip(spearman), clip(kendall), n)
