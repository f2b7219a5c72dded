# distutils: language = c++
# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled persistence kernel for Vietoris-Rips filtrations.

Same algorithm and output as ``_reduce_py``: union-find for dimension 0,
then coboundary-matrix reduction with clearing and emergent pairs for
dimensions 1..max_dim.

A simplex is encoded as ``rank << 40 | colex`` where ``rank`` is the index
of its diameter among the sorted distinct pairwise distances and ``colex``
is its combinatorial-number-system index.  Ordering by this key orders the
filtration by diameter, breaking ties lexicographically on the descending
vertex tuple.
"""

from libc.stdint cimport int64_t, uint64_t, int32_t
from libcpp.vector cimport vector
from libcpp.unordered_map cimport unordered_map
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.algorithm cimport sort
from cython.operator cimport dereference as deref

import numpy as np

ctypedef pair[int64_t, int] Entry  # (-key, coefficient): max-heap top = smallest key

cdef int SHIFT = 40
cdef uint64_t INDEX_MASK = (<uint64_t>1 << 40) - 1


cdef struct Stored:
    uint64_t sigma
    int pivot_coef
    int64_t v_start   # -1 when the reduced column is just the coboundary of sigma
    int64_t v_len


cdef class _Ctx:
    cdef int n, p, limit
    cdef const int32_t[:, ::1] R
    cdef vector[uint64_t] binom  # binom[v * 6 + k] = C(v, k)
    cdef vector[Entry] buf

    def __init__(self, const int32_t[:, ::1] R, int limit, int p):
        self.R = R
        self.n = R.shape[0]
        self.limit = limit
        self.p = p
        cdef int v, k
        self.binom.resize((self.n + 1) * 6, 0)
        for v in range(self.n + 1):
            self.binom[v * 6] = 1
            for k in range(1, 6):
                if v == 0:
                    self.binom[v * 6 + k] = 0
                else:
                    self.binom[v * 6 + k] = self.binom[(v - 1) * 6 + k - 1] + self.binom[(v - 1) * 6 + k]

    cdef inline uint64_t C(self, int v, int k) nogil:
        return self.binom[v * 6 + k]

    cdef void vertices(self, uint64_t key, int dim, int* out) nogil:
        """Vertices of a dim-simplex in descending order."""
        cdef uint64_t idx = key & INDEX_MASK
        cdef int k, lo, hi, mid
        for k in range(dim + 1, 0, -1):
            lo = k - 1
            hi = self.n - 1
            while lo < hi:
                mid = (lo + hi + 1) // 2
                if self.C(mid, k) <= idx:
                    lo = mid
                else:
                    hi = mid - 1
            out[dim + 1 - k] = lo
            idx -= self.C(lo, k)

    cdef void cofacets(self, uint64_t key, int dim, vector[Entry]& out) nogil:
        """Append (-key, coef) for every cofacet within the threshold."""
        cdef int vs[8]
        cdef int w, i, pos, r, nv = dim + 1
        cdef int srank = <int>(key >> SHIFT)
        cdef uint64_t idx, upper, lower
        cdef int coef
        self.vertices(key, dim, vs)
        # vs descending; walk w downwards, keeping track of how many vertices exceed w
        cdef int above = 0
        for w in range(self.n - 1, -1, -1):
            if above < nv and vs[above] == w:
                above += 1
                continue
            r = srank
            for i in range(nv):
                if self.R[vs[i], w] > r:
                    r = self.R[vs[i], w]
            if r > self.limit:
                continue
            pos = nv - above  # ascending position of w in the cofacet
            idx = self.C(w, pos + 1)
            for i in range(above):
                idx += self.C(vs[i], nv - i + 1)
            for i in range(above, nv):
                idx += self.C(vs[i], nv - i)
            coef = 1 if pos % 2 == 0 else self.p - 1
            out.push_back(Entry(-<int64_t>((<uint64_t>r << SHIFT) | idx), coef))


    cdef bint min_cofacet(self, uint64_t key, int dim, int64_t* best_neg, int* coef) nogil:
        """Smallest cofacet key (negated) without materialising the coboundary.

        Scans ``w`` upwards: for a fixed diameter the colex index grows with
        ``w``, so the first cofacet whose diameter equals the simplex's own is
        the minimum and the scan stops there.
        """
        cdef int vs[8]
        cdef int w, i, r, pos, nv = dim + 1
        cdef int srank = <int>(key >> SHIFT)
        cdef int best_r = self.limit + 1
        cdef int best_w = -1, best_pos = 0
        cdef int below = 0  # vertices of the simplex smaller than w
        cdef uint64_t idx
        self.vertices(key, dim, vs)
        for w in range(self.n):
            if below < nv and vs[nv - 1 - below] == w:
                below += 1
                continue
            r = srank
            for i in range(nv):
                if self.R[vs[i], w] > r:
                    r = self.R[vs[i], w]
            if r < best_r:
                best_r = r
                best_w = w
                best_pos = below
                if r == srank:
                    break
        if best_w < 0:
            return False
        # index of the cofacet: vertices above w shift up one position
        pos = best_pos
        idx = self.C(best_w, pos + 1)
        for i in range(nv - pos):
            idx += self.C(vs[i], nv - i + 1)
        for i in range(nv - pos, nv):
            idx += self.C(vs[i], nv - i)
        best_neg[0] = -<int64_t>((<uint64_t>best_r << SHIFT) | idx)
        coef[0] = 1 if pos % 2 == 0 else self.p - 1
        return True


cdef class _Holder:
    cdef unordered_map[uint64_t, int] m


cdef int _inverse(int a, int p) nogil:
    cdef int x
    for x in range(1, p):
        if (a * x) % p == 1:
            return x
    return 0


cdef bint _pop_pivot(priority_queue[Entry]& heap, int p, int64_t* key, int* coef) nogil:
    cdef int64_t k
    cdef int c
    while not heap.empty():
        k = heap.top().first
        c = 0
        while not heap.empty() and heap.top().first == k:
            c += heap.top().second
            heap.pop()
        c %= p
        if c != 0:
            heap.push(Entry(k, c))
            key[0] = k
            coef[0] = c
            return True
    return False


cdef inline int _uf_find(int[::1] parent, int x):
    while parent[x] != x:
        parent[x] = parent[parent[x]]
        x = parent[x]
    return x


cdef _Holder _reduce_dim(_Ctx ctx, vector[uint64_t]& columns, int dim, list out):
    cdef int p = ctx.p
    cdef _Holder pivots = _Holder()   # pivot (d+1)-simplex -> slot in `stored`
    cdef vector[Stored] stored
    cdef vector[Entry] pool        # V columns of non-trivial reductions: (key, coef)
    cdef vector[Entry] work_v
    cdef vector[Entry]* cof = &ctx.buf
    cdef priority_queue[Entry] heap
    cdef int64_t ci, best, pkey
    cdef uint64_t sigma, s
    cdef int pcoef, c, factor, slot, birth, death, m
    cdef size_t t, u
    cdef Stored st
    cdef unordered_map[uint64_t, int].iterator it
    cdef bint found

    with nogil:
        for ci in range(<int64_t>columns.size() - 1, -1, -1):
            sigma = columns[ci]
            birth = <int>(sigma >> SHIFT)
            if not ctx.min_cofacet(sigma, dim, &best, &m):
                with gil:
                    out.append((birth, -1))
                continue
            if pivots.m.count(<uint64_t>(-best)) == 0:
                # already reduced: its pivot is new
                st.sigma = sigma
                st.pivot_coef = m
                st.v_start = -1
                st.v_len = 0
                pivots.m[<uint64_t>(-best)] = <int>stored.size()
                stored.push_back(st)
                death = <int>((<uint64_t>(-best)) >> SHIFT)
                if death != birth:
                    with gil:
                        out.append((birth, death))
                continue

            while not heap.empty():
                heap.pop()
            cof.clear()
            ctx.cofacets(sigma, dim, cof[0])
            for t in range(cof.size()):
                heap.push(cof[0][t])
            work_v.clear()
            work_v.push_back(Entry(<int64_t>sigma, 1))
            found = _pop_pivot(heap, p, &pkey, &pcoef)
            while found:
                it = pivots.m.find(<uint64_t>(-pkey))
                if it == pivots.m.end():
                    break
                st = stored[deref(it).second]
                factor = ((p - pcoef) * _inverse(st.pivot_coef, p)) % p
                if st.v_start < 0:
                    work_v.push_back(Entry(<int64_t>st.sigma, factor))
                    cof.clear()
                    ctx.cofacets(st.sigma, dim, cof[0])
                    for t in range(cof.size()):
                        heap.push(Entry(cof[0][t].first, (cof[0][t].second * factor) % p))
                else:
                    for u in range(<size_t>st.v_start, <size_t>(st.v_start + st.v_len)):
                        s = <uint64_t>pool[u].first
                        c = (pool[u].second * factor) % p
                        work_v.push_back(Entry(<int64_t>s, c))
                        cof.clear()
                        ctx.cofacets(s, dim, cof[0])
                        for t in range(cof.size()):
                            heap.push(Entry(cof[0][t].first, (cof[0][t].second * c) % p))
                found = _pop_pivot(heap, p, &pkey, &pcoef)
            if not found:
                with gil:
                    out.append((birth, -1))
                continue
            # compress V: combine equal simplices, drop zero coefficients
            sort(work_v.begin(), work_v.end())
            st.sigma = sigma
            st.pivot_coef = pcoef
            st.v_start = <int64_t>pool.size()
            t = 0
            while t < work_v.size():
                s = <uint64_t>work_v[t].first
                c = 0
                while t < work_v.size() and <uint64_t>work_v[t].first == s:
                    c += work_v[t].second
                    t += 1
                c %= p
                if c != 0:
                    pool.push_back(Entry(<int64_t>s, c))
            st.v_len = <int64_t>pool.size() - st.v_start
            pivots.m[<uint64_t>(-pkey)] = <int>stored.size()
            stored.push_back(st)
            death = <int>((<uint64_t>(-pkey)) >> SHIFT)
            if death != birth:
                with gil:
                    out.append((birth, death))
    return pivots


def persistence_pairs(const int32_t[:, ::1] R, int limit, int max_dim, int p):
    """Persistence pairs as rank pairs ``(birth, death)`` per dimension.

    ``death == -1`` marks an essential class.  In dimensions >= 1 pairs with
    ``birth == death`` are not reported; dimension-0 births are the value 0,
    which has no rank, so the caller filters those.
    """
    cdef _Ctx ctx = _Ctx(R, limit, p)
    cdef int n = R.shape[0]
    cdef int i, j, d, a, b
    out = [[] for _ in range(max_dim + 1)]

    # ---- dimension 0: Kruskal over edges in filtration order
    cdef vector[uint64_t] edges
    for j in range(n):
        for i in range(j):
            if R[i, j] <= limit:
                edges.push_back((<uint64_t>R[i, j] << SHIFT) | (ctx.C(j, 2) + i))
    sort(edges.begin(), edges.end())
    parent_arr = np.arange(n, dtype=np.intc)
    cdef int[::1] parent = parent_arr
    cdef unordered_map[uint64_t, int] cleared
    cdef int vs[8]
    cdef size_t e
    for e in range(edges.size()):
        ctx.vertices(edges[e], 1, vs)
        a = _uf_find(parent, vs[0])
        b = _uf_find(parent, vs[1])
        if a != b:
            # elder rule: the component with the larger root index dies
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
            cleared[edges[e]] = 1
            out[0].append((0, int(edges[e] >> SHIFT)))
    for i in range(n):
        if _uf_find(parent, i) == i:
            out[0].append((0, -1))

    # ---- dimensions >= 1: cohomology with clearing
    cdef vector[uint64_t] columns
    cdef vector[uint64_t] cur = edges
    cdef int k
    for d in range(1, max_dim + 1):
        if d > 1:
            cur.clear()
            for k in range(n):
                for j in range(k):
                    if R[j, k] > limit:
                        continue
                    for i in range(j):
                        if R[i, j] <= limit and R[i, k] <= limit:
                            a = R[j, k]
                            if R[i, j] > a:
                                a = R[i, j]
                            if R[i, k] > a:
                                a = R[i, k]
                            cur.push_back((<uint64_t>a << SHIFT) | (ctx.C(k, 3) + ctx.C(j, 2) + i))
        columns.clear()
        for e in range(cur.size()):
            if cleared.count(cur[e]) == 0:
                columns.push_back(cur[e])
        sort(columns.begin(), columns.end())
        next_cleared: _Holder = _reduce_dim(ctx, columns, d, out[d])
        cleared.swap(next_cleared.m)
    return out
