"""Pure-Python implementations of the numeric hot loops.

Mirrors :mod:`iuq._ckernels` function for function, with the same summation
order, so both back ends agree bitwise on identical inputs.
"""
from __future__ import annotations

import math
from collections import deque
from typing import Sequence

NAME = "python"


def exp_weights(unfaith: Sequence[float], lam: float) -> list[float]:
    decay = math.exp(-lam)
    out = []
    acc = 0.0
    for u in unfaith:
        acc = acc * decay + u
        out.append(acc)
    return out


def cumulative_weights(unfaith: Sequence[float]) -> list[float]:
    out = []
    acc = 0.0
    for u in unfaith:
        acc += u
        out.append(acc)
    return out


def linear_weights(unfaith: Sequence[float], m: float, b: float) -> list[float]:
    out = []
    acc = 0.0
    for j, u in enumerate(unfaith, start=1):
        w = m * j + b
        if w > 0.0:
            acc += u * w
        out.append(acc)
    return out


def _tie_groups(scores: Sequence[float], labels: Sequence[int], descending: bool):
    order = sorted(range(len(scores)), key=lambda k: scores[k], reverse=descending)
    i = 0
    n = len(order)
    while i < n:
        j = i
        pos = 0
        while j < n and scores[order[j]] == scores[order[i]]:
            pos += 1 if labels[order[j]] else 0
            j += 1
        yield pos, (j - i) - pos
        i = j


def mann_whitney_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """AUROC as (wins + ties/2) / (n_pos * n_neg); nan for single-class input."""
    n_pos = sum(1 for y in labels if y)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    twice = 0
    neg_below = 0
    for pos, neg in _tie_groups(scores, labels, descending=False):
        twice += 2 * pos * neg_below + pos * neg
        neg_below += neg
    return (twice / 2.0) / (n_pos * n_neg)


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    n_pos = sum(1 for y in labels if y)
    if n_pos == 0:
        return math.nan
    tp = 0
    seen = 0
    total = 0.0
    for pos, neg in _tie_groups(scores, labels, descending=True):
        tp += pos
        seen += pos + neg
        if pos:
            total += pos * (tp / seen)
    return total / n_pos


def closeness(indptr: Sequence[int], indices: Sequence[int]) -> list[float]:
    """Wasserman-Faust closeness for every node of a CSR adjacency."""
    n = len(indptr) - 1
    out = [0.0] * n
    if n < 2:
        return out
    for src in range(n):
        dist = [-1] * n
        dist[src] = 0
        queue = deque([src])
        total = 0
        reach = 1
        while queue:
            v = queue.popleft()
            for k in range(indptr[v], indptr[v + 1]):
                u = indices[k]
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    total += dist[u]
                    reach += 1
                    queue.append(u)
        if total > 0:
            out[src] = ((reach - 1) / (n - 1)) * ((reach - 1) / total)
    return out
