"""Impact-aware discretization of a continuous feature.

Greedy recursive binary splitting: at each round the single split (over all
current intervals) that most reduces the within-interval squared deviation
of the impact variable is applied, until ``max_intervals`` is reached or no
split helps. Cut points sit midway between neighbouring distinct values,
and intervals are half-open ``(lo, hi]`` with the first one also holding
the minimum.
"""

from __future__ import annotations

from bisect import bisect_left
from typing import Sequence

import numpy as np


def _sse(s: np.ndarray, s2: np.ndarray, i: int, j: int) -> float:
    """Sum of squared deviations over sorted positions [i, j)."""
    n = j - i
    total = s[j] - s[i]
    return float((s2[j] - s2[i]) - total * total / n)


def discretize_impact(
    samples: Sequence[tuple[float, float]], max_intervals: int, min_support: int = 1
) -> list[float]:
    """Interval edges ``[min, cut_1, ..., max]`` for ``(value, impact)`` samples.

    All-equal values give the single edge ``[v]``. When ``min_support *
    max_intervals`` exceeds the sample count the result is one interval.
    """
    if max_intervals < 1:
        raise ValueError("max_intervals must be >= 1")
    if not samples:
        raise ValueError("discretize_impact needs at least one sample")
    order = sorted(samples, key=lambda s: s[0])
    values = np.array([float(v) for v, _ in order])
    impacts = np.array([float(y) for _, y in order])
    lo, hi = float(values[0]), float(values[-1])
    if lo == hi:
        return [lo]
    n = len(values)
    if min_support * max_intervals > n:
        return [lo, hi]

    centered = impacts - impacts.mean()
    s = np.concatenate(([0.0], np.cumsum(centered)))
    s2 = np.concatenate(([0.0], np.cumsum(centered * centered)))
    # position p splits sorted data into [.., p) and [p, ..); only between distinct values
    valid = [p for p in range(1, n) if values[p - 1] < values[p]]
    tol = 1e-12 * max(1.0, _sse(s, s2, 0, n))

    leaves = [(0, n)]
    while len(leaves) < max_intervals:
        best = None
        for li, (i, j) in enumerate(leaves):
            parent = _sse(s, s2, i, j)
            for p in valid:
                if p <= i or p >= j or p - i < min_support or j - p < min_support:
                    continue
                gain = parent - _sse(s, s2, i, p) - _sse(s, s2, p, j)
                if best is None or gain > best[0]:
                    best = (gain, li, p)
        if best is None or best[0] <= tol:
            break
        _, li, p = best
        i, j = leaves[li]
        leaves[li : li + 1] = [(i, p), (p, j)]

    cuts = [float((values[i - 1] + values[i]) / 2) for i, _ in leaves[1:]]
    return [lo, *cuts, hi]


def interval_index(edges: Sequence[float], value: float) -> int:
    """Index of the interval holding ``value`` (clamped to the outer intervals)."""
    if len(edges) <= 2:
        return 0
    cuts = edges[1:-1]
    return bisect_left(cuts, value)


def interval_count(edges: Sequence[float]) -> int:
    return max(1, len(edges) - 1)
