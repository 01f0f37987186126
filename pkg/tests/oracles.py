"""Slow, independent reference computations used as test oracles."""
from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np


def cond_expectation(tree, x, S) -> float:
    """E[f(x) | x_S] under the cover-weighted path-dependent value function."""

    def rec(node):
        f = tree.feature[node]
        if f < 0:
            return float(tree.value[node])
        l, r = tree.left[node], tree.right[node]
        if f in S:
            return rec(l if x[f] <= tree.threshold[node] else r)
        return (tree.cover[l] * rec(l) + tree.cover[r] * rec(r)) / tree.cover[node]

    return rec(0)


def brute_shapley(trees, x, n_features: int) -> tuple[np.ndarray, float]:
    """Shapley values of the sum of ``trees`` by enumerating all feature subsets."""
    M = n_features

    def v(S):
        return sum(cond_expectation(t, x, S) for t in trees)

    phi = np.zeros(M)
    for j in range(M):
        others = [i for i in range(M) if i != j]
        for size in range(M):
            weight = math.factorial(size) * math.factorial(M - size - 1) / math.factorial(M)
            for S in itertools.combinations(others, size):
                S = set(S)
                phi[j] += weight * (v(S | {j}) - v(S))
    return phi, v(set())


def flood_fill_components(on: np.ndarray, connectivity: int = 4) -> list[int]:
    """Areas of connected True regions, in raster order of their first pixel."""
    h, w = on.shape
    seen = np.zeros_like(on, dtype=bool)
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    areas = []
    for r in range(h):
        for c in range(w):
            if on[r, c] and not seen[r, c]:
                seen[r, c] = True
                queue = deque([(r, c)])
                area = 0
                while queue:
                    pr, pc = queue.popleft()
                    area += 1
                    for dr, dc in steps:
                        nr, nc = pr + dr, pc + dc
                        if 0 <= nr < h and 0 <= nc < w and on[nr, nc] and not seen[nr, nc]:
                            seen[nr, nc] = True
                            queue.append((nr, nc))
                areas.append(area)
    return areas


def entropy_ratio(counts) -> float:
    """Normalised entropy by explicit summation, natural log."""
    counts = [c for c in counts if c > 0]
    total = float(sum(counts))
    if len(counts) < 2:
        return 0.0
    h = 0.0
    for c in counts:
        p = c / total
        h -= p * math.log(p)
    return h / math.log(len(counts))


def cross_product_odds_ratio(a, b, c, d) -> float:
    """OR of a 2x2 table: exposed events a, exposed non-events b, unexposed events c, non-events d."""
    return (a * d) / (b * c)


def nearest_rank(values, pct: float) -> float:
    s = sorted(values)
    rank = math.ceil(pct / 100.0 * len(s))
    return s[max(rank, 1) - 1]
