"""Exact bottleneck distance between persistence diagrams.

A partial matching pairs points of ``P`` with points of ``Q``; unmatched
points pay half their persistence (their L-infinity distance to the
diagonal).  The optimal cost is one of finitely many candidate values, so we
binary-search the sorted candidates with a perfect-matching feasibility test
on the usual augmented bipartite graph (each diagram is padded with diagonal
copies of the other's points).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .diagrams import PersistenceDiagram


@dataclass
class Matching:
    """Optimal partial matching: index pairs plus points sent to the diagonal."""

    pairs: list[tuple[int, int]] = field(default_factory=list)
    unmatched_p: list[int] = field(default_factory=list)
    unmatched_q: list[int] = field(default_factory=list)


def _as_bars(d, dim: int | None) -> np.ndarray:
    if isinstance(d, PersistenceDiagram):
        if dim is None:
            raise ValueError("dim is required for PersistenceDiagram inputs")
        return d.bars(dim)
    arr = np.asarray(d, dtype=float)
    return arr.reshape(-1, 2) if arr.size else np.empty((0, 2))


def _split(bars: np.ndarray):
    inf = ~np.isfinite(bars[:, 1])
    return bars[~inf], bars[inf]


def _feasible(P, Q, cross, diag_p, diag_q, eps):
    """Perfect matching exists using only edges of cost <= eps?"""
    m, n = len(P), len(Q)
    rows, cols = [], []
    # left: P (0..m-1) then diagonal copies of Q (m..m+n-1)
    # right: Q (0..n-1) then diagonal copies of P (n..n+m-1)
    pi, qj = np.nonzero(cross <= eps)
    rows.append(pi)
    cols.append(qj)
    ok_p = np.nonzero(diag_p <= eps)[0]
    rows.append(ok_p)
    cols.append(n + ok_p)
    ok_q = np.nonzero(diag_q <= eps)[0]
    rows.append(m + ok_q)
    cols.append(ok_q)
    # diagonal-to-diagonal edges are free
    dq, dp = np.meshgrid(np.arange(n), np.arange(m), indexing="ij")
    rows.append(m + dq.ravel())
    cols.append(n + dp.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    size = m + n
    graph = csr_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(size, size))
    match = maximum_bipartite_matching(graph, perm_type="column")
    return bool(np.all(match >= 0)), match


def bottleneck_matching(p, q, dim: int | None = None) -> tuple[float, Matching]:
    P, P_inf = _split(_as_bars(p, dim))
    Q, Q_inf = _split(_as_bars(q, dim))
    if len(P_inf) != len(Q_inf):
        return math.inf, Matching()
    m, n = len(P), len(Q)
    if m == 0 and n == 0:
        return 0.0, Matching()
    cross = np.maximum(np.abs(P[:, None, 0] - Q[None, :, 0]), np.abs(P[:, None, 1] - Q[None, :, 1])) \
        if m and n else np.empty((m, n))
    diag_p = (P[:, 1] - P[:, 0]) / 2.0
    diag_q = (Q[:, 1] - Q[:, 0]) / 2.0
    candidates = np.unique(np.concatenate([cross.ravel(), diag_p, diag_q, [0.0]]))
    lo, hi = 0, len(candidates) - 1
    # the largest candidate is always feasible (everything to the diagonal)
    while lo < hi:
        mid = (lo + hi) // 2
        if _feasible(P, Q, cross, diag_p, diag_q, candidates[mid])[0]:
            hi = mid
        else:
            lo = mid + 1
    eps = float(candidates[lo])
    _, match = _feasible(P, Q, cross, diag_p, diag_q, eps)
    out = Matching()
    for left, right in enumerate(match):
        if left < m and right < n:
            out.pairs.append((left, int(right)))
        elif left < m:
            out.unmatched_p.append(left)
        elif right < n:
            out.unmatched_q.append(int(right))
    return eps, out


def bottleneck(p, q, dim: int | None = None) -> float:
    """Bottleneck distance in one homology dimension.

    Essential (infinite) bars are compared only by count: equal counts
    contribute nothing, unequal counts make the distance infinite.
    """
    return bottleneck_matching(p, q, dim)[0]


def bottleneck_l2(p, q, dims) -> float:
    """Euclidean norm of the per-dimension bottleneck distances.

    ``p`` and ``q`` are either PersistenceDiagrams or mappings from
    dimension to (m, 2) bar arrays.
    """
    total = 0.0
    for d in dims:
        a = p if isinstance(p, PersistenceDiagram) else p[d]
        b = q if isinstance(q, PersistenceDiagram) else q[d]
        dist = bottleneck(a, b, d if isinstance(a, PersistenceDiagram) else None)
        total += dist * dist
    return math.sqrt(total)
