"""Pure-Python persistence kernel; mirrors ``_reduce.pyx`` step for step.

Used when the compiled extension is unavailable and as a reference in tests.
See the compiled module for the simplex encoding.
"""

from __future__ import annotations

import heapq
from math import comb

import numpy as np

SHIFT = 40
INDEX_MASK = (1 << SHIFT) - 1


class _Ctx:
    def __init__(self, R: np.ndarray, limit: int, p: int):
        self.R = R.tolist()
        self.n = len(self.R)
        self.limit = limit
        self.p = p
        self.binom = [[comb(v, k) for k in range(6)] for v in range(self.n + 1)]

    def vertices(self, key: int, dim: int) -> list[int]:
        """Vertices of a dim-simplex in descending order."""
        idx = key & INDEX_MASK
        out = []
        for k in range(dim + 1, 0, -1):
            lo, hi = k - 1, self.n - 1
            while lo < hi:
                mid = (lo + hi + 1) // 2
                if self.binom[mid][k] <= idx:
                    lo = mid
                else:
                    hi = mid - 1
            out.append(lo)
            idx -= self.binom[lo][k]
        return out

    def cofacets(self, key: int, dim: int) -> list[tuple[int, int]]:
        """(key, coef) of every cofacet within the threshold."""
        vs = self.vertices(key, dim)
        nv = dim + 1
        srank = key >> SHIFT
        R, C, p = self.R, self.binom, self.p
        out = []
        above = 0
        for w in range(self.n - 1, -1, -1):
            if above < nv and vs[above] == w:
                above += 1
                continue
            r = srank
            for v in vs:
                if R[v][w] > r:
                    r = R[v][w]
            if r > self.limit:
                continue
            pos = nv - above
            idx = C[w][pos + 1]
            for i in range(above):
                idx += C[vs[i]][nv - i + 1]
            for i in range(above, nv):
                idx += C[vs[i]][nv - i]
            out.append(((r << SHIFT) | idx, 1 if pos % 2 == 0 else p - 1))
        return out


    def min_cofacet(self, key: int, dim: int):
        """(key, coef) of the smallest cofacet, or None.

        Scans ``w`` upwards and stops at the first cofacet whose diameter
        equals the simplex's own: for a fixed diameter the colex index grows
        with ``w``, so that one is the minimum.
        """
        vs = self.vertices(key, dim)
        nv = dim + 1
        srank = key >> SHIFT
        R, C = self.R, self.binom
        best_r, best_w, best_pos = self.limit + 1, -1, 0
        below = 0
        for w in range(self.n):
            if below < nv and vs[nv - 1 - below] == w:
                below += 1
                continue
            r = srank
            for v in vs:
                if R[v][w] > r:
                    r = R[v][w]
            if r < best_r:
                best_r, best_w, best_pos = r, w, below
                if r == srank:
                    break
        if best_w < 0:
            return None
        pos = best_pos
        idx = C[best_w][pos + 1]
        for i in range(nv - pos):
            idx += C[vs[i]][nv - i + 1]
        for i in range(nv - pos, nv):
            idx += C[vs[i]][nv - i]
        return (best_r << SHIFT) | idx, 1 if pos % 2 == 0 else self.p - 1


def _pop_pivot(heap: list, p: int):
    while heap:
        k = heap[0][0]
        c = 0
        while heap and heap[0][0] == k:
            c += heapq.heappop(heap)[1]
        c %= p
        if c:
            heapq.heappush(heap, (k, c))
            return k, c
    return None


def _reduce_dim(ctx: _Ctx, columns: list[int], dim: int, out: list) -> dict:
    p = ctx.p
    pivots: dict[int, tuple[int, int, list | None]] = {}
    for sigma in reversed(columns):
        birth = sigma >> SHIFT
        best = ctx.min_cofacet(sigma, dim)
        if best is None:
            out.append((birth, -1))
            continue
        best_key, best_coef = best
        if best_key not in pivots:
            pivots[best_key] = (sigma, best_coef, None)
            if best_key >> SHIFT != birth:
                out.append((birth, best_key >> SHIFT))
            continue

        heap = ctx.cofacets(sigma, dim)
        heapq.heapify(heap)
        work_v = [(sigma, 1)]
        piv = _pop_pivot(heap, p)
        while piv is not None and piv[0] in pivots:
            pkey, pcoef = piv
            s_sigma, s_coef, s_v = pivots[pkey]
            factor = ((p - pcoef) * pow(s_coef, -1, p)) % p
            for s, c in ([(s_sigma, 1)] if s_v is None else s_v):
                c = (c * factor) % p
                work_v.append((s, c))
                for key, cc in ctx.cofacets(s, dim):
                    heapq.heappush(heap, (key, (cc * c) % p))
            piv = _pop_pivot(heap, p)
        if piv is None:
            out.append((birth, -1))
            continue
        combined: dict[int, int] = {}
        for s, c in work_v:
            combined[s] = (combined.get(s, 0) + c) % p
        v = sorted((s, c) for s, c in combined.items() if c)
        pkey, pcoef = piv
        pivots[pkey] = (sigma, pcoef, v)
        if pkey >> SHIFT != birth:
            out.append((birth, pkey >> SHIFT))
    return pivots


def _find(parent: list[int], x: int) -> int:
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


def persistence_pairs(R: np.ndarray, limit: int, max_dim: int, p: int) -> list[list[tuple[int, int]]]:
    """Persistence pairs as rank pairs ``(birth, death)``; ``death == -1`` is essential."""
    ctx = _Ctx(np.asarray(R), limit, p)
    n = ctx.n
    Rl = ctx.R
    out: list[list[tuple[int, int]]] = [[] for _ in range(max_dim + 1)]

    edges = sorted((Rl[i][j] << SHIFT) | (comb(j, 2) + i)
                   for j in range(n) for i in range(j) if Rl[i][j] <= limit)
    parent = list(range(n))
    cleared: set[int] | dict = set()
    for e in edges:
        hi, lo = ctx.vertices(e, 1)
        a, b = _find(parent, hi), _find(parent, lo)
        if a != b:
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
            cleared.add(e)
            out[0].append((0, e >> SHIFT))
    out[0].extend((0, -1) for i in range(n) if _find(parent, i) == i)

    cur = edges
    for d in range(1, max_dim + 1):
        if d > 1:
            cur = []
            for k in range(n):
                for j in range(k):
                    if Rl[j][k] > limit:
                        continue
                    for i in range(j):
                        if Rl[i][j] <= limit and Rl[i][k] <= limit:
                            r = max(Rl[i][j], Rl[i][k], Rl[j][k])
                            cur.append((r << SHIFT) | (comb(k, 3) + comb(j, 2) + i))
        columns = sorted(s for s in cur if s not in cleared)
        cleared = _reduce_dim(ctx, columns, d, out[d])
    return out
