# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled regression-tree kernels; bit-identical to ``_tree_py``.

Instead of sorting at every node, each feature's sample order is derived once
per tree from a per-dataset presort and then stably partitioned down the
tree, which yields exactly the (value, position) order that the fallback
obtains with a stable argsort per node.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int32_t, int64_t
from libc.string cimport memcpy

cnp.import_array()


cdef inline uint64_t _next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + <uint64_t>0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef class _Builder:
    cdef double[:, ::1] xb        # (p, n) feature values of bootstrap positions
    cdef double[::1] yb
    cdef int64_t[::1] rows        # position -> original row
    cdef int64_t[:, ::1] order    # (p, n) positions sorted per feature
    cdef int64_t[::1] pos         # positions in ascending order
    cdef int64_t[::1] scratch
    cdef char[::1] flag
    cdef int32_t[::1] perm
    cdef int p, n, mtry, min_leaf, max_depth
    cdef uint64_t state
    cdef int32_t[::1] feature, left, right, lstart, lcount, members
    cdef double[::1] threshold
    cdef int n_nodes, n_members

    cdef void _partition(self, int64_t* arr, int s, int e, int nleft) noexcept nogil:
        cdef int i, a = 0, b = nleft
        cdef int64_t v
        for i in range(s, e):
            v = arr[i]
            if self.flag[v]:
                self.scratch[a] = v
                a += 1
            else:
                self.scratch[b] = v
                b += 1
        memcpy(arr + s, &self.scratch[0], (e - s) * sizeof(int64_t))

    cdef int grow(self, int s, int e, int depth) except -1 nogil:
        cdef int node = self.n_nodes
        cdef int n = e - s
        cdef int i, j, t, fi, f, best_f = -1, nl, nleft
        cdef int64_t k, kprev
        cdef double ymin, ymax, yy, best_cost = 0.0, best_thr = 0.0
        cdef double s1, s2, t1, t2, r1, cost, a, b, thr
        self.n_nodes += 1
        self.feature[node] = -1
        self.threshold[node] = 0.0
        self.left[node] = -1
        self.right[node] = -1
        self.lstart[node] = -1
        self.lcount[node] = 0

        ymin = self.yb[self.pos[s]]
        ymax = ymin
        for i in range(s + 1, e):
            yy = self.yb[self.pos[i]]
            if yy < ymin:
                ymin = yy
            if yy > ymax:
                ymax = yy
        if n >= 2 * self.min_leaf and ymax > ymin and (self.max_depth < 0 or depth < self.max_depth):
            for i in range(self.p):
                self.perm[i] = i
            for i in range(self.mtry):
                j = i + <int>(_next(&self.state) % <uint64_t>(self.p - i))
                t = self.perm[i]
                self.perm[i] = self.perm[j]
                self.perm[j] = t
            for fi in range(self.mtry):
                f = self.perm[fi]
                t1 = 0.0
                t2 = 0.0
                for i in range(s, e):
                    yy = self.yb[self.order[f, i]]
                    t1 += yy
                    t2 += yy * yy
                s1 = 0.0
                s2 = 0.0
                for nl in range(1, n - self.min_leaf + 1):
                    kprev = self.order[f, s + nl - 1]
                    yy = self.yb[kprev]
                    s1 += yy
                    s2 += yy * yy
                    if nl < self.min_leaf:
                        continue
                    k = self.order[f, s + nl]
                    a = self.xb[f, kprev]
                    b = self.xb[f, k]
                    if not (a < b):
                        continue
                    r1 = t1 - s1
                    cost = (s2 - s1 * s1 / <double>nl) + ((t2 - s2) - r1 * r1 / <double>(n - nl))
                    if best_f < 0 or cost < best_cost:
                        thr = 0.5 * (a + b)
                        if thr >= b:
                            thr = a
                        best_cost = cost
                        best_f = f
                        best_thr = thr
        if best_f < 0:
            self.lstart[node] = self.n_members
            self.lcount[node] = n
            for i in range(s, e):
                self.members[self.n_members] = <int32_t>self.rows[self.pos[i]]
                self.n_members += 1
            return node

        nleft = 0
        for i in range(s, e):
            k = self.pos[i]
            if self.xb[best_f, k] <= best_thr:
                self.flag[k] = 1
                nleft += 1
            else:
                self.flag[k] = 0
        self._partition(&self.pos[0], s, e, nleft)
        for f in range(self.p):
            self._partition(&self.order[f, 0], s, e, nleft)
        self.feature[node] = best_f
        self.threshold[node] = best_thr
        self.left[node] = self.grow(s, s + nleft, depth + 1)
        self.right[node] = self.grow(s + nleft, e, depth + 1)
        return node


def presort(X):
    """Per-feature row order by (value, row index); shape (p, N)."""
    X = np.asarray(X, dtype=np.float64)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def build_tree(X, y, sample, int mtry, int min_leaf, seed, int max_depth=-1, presorted=None):
    """Grow one regression tree; see ``_tree_py.build_tree`` for the contract."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    cdef int N = X.shape[0]
    cdef int p = X.shape[1]
    if presorted is None:
        presorted = presort(X)
    cdef const int64_t[:, ::1] pre = presorted
    rows_arr = np.sort(np.asarray(sample, dtype=np.int64))
    cdef int n = rows_arr.shape[0]
    counts = np.bincount(rows_arr, minlength=N).astype(np.int64)
    first = np.zeros(N, dtype=np.int64)
    if N > 1:
        np.cumsum(counts[:-1], out=first[1:])
    cdef const int64_t[::1] cnt = counts
    cdef const int64_t[::1] fst = first

    order_arr = np.empty((p, max(n, 1)), dtype=np.int64)
    cdef int64_t[:, ::1] order = order_arr
    cdef int f, r, c, j
    cdef int64_t w
    for f in range(p):
        w = 0
        for j in range(N):
            r = pre[f, j]
            for c in range(cnt[r]):
                order[f, w] = fst[r] + c
                w += 1

    cdef _Builder bld = _Builder()
    bld.rows = rows_arr
    bld.xb = np.ascontiguousarray(X[rows_arr].T)
    bld.yb = np.ascontiguousarray(y[rows_arr])
    bld.order = order
    bld.pos = np.arange(n, dtype=np.int64)
    bld.scratch = np.empty(max(n, 1), dtype=np.int64)
    bld.flag = np.zeros(max(n, 1), dtype=np.int8)
    bld.perm = np.empty(max(p, 1), dtype=np.int32)
    bld.p = p
    bld.n = n
    bld.mtry = mtry
    bld.min_leaf = min_leaf
    bld.max_depth = max_depth
    bld.state = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cap = 2 * n + 1
    feature = np.empty(cap, dtype=np.int32)
    left = np.empty(cap, dtype=np.int32)
    right = np.empty(cap, dtype=np.int32)
    lstart = np.empty(cap, dtype=np.int32)
    lcount = np.empty(cap, dtype=np.int32)
    threshold = np.empty(cap, dtype=np.float64)
    members = np.empty(n, dtype=np.int32)
    bld.feature = feature
    bld.left = left
    bld.right = right
    bld.lstart = lstart
    bld.lcount = lcount
    bld.threshold = threshold
    bld.members = members
    bld.n_nodes = 0
    bld.n_members = 0
    if n > 0:
        with nogil:
            bld.grow(0, n, 0)
    k = bld.n_nodes
    return (feature[:k].copy(), threshold[:k].copy(), left[:k].copy(), right[:k].copy(),
            lstart[:k].copy(), lcount[:k].copy(), members)


def apply_forest(const int32_t[::1] feature, const double[::1] threshold,
                 const int32_t[::1] left, const int32_t[::1] right,
                 const int64_t[::1] offsets, X):
    """Leaf node (tree-local id) reached by every row of ``X`` in every tree."""
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t T = offsets.shape[0] - 1
    out = np.empty((n, T), dtype=np.int32)
    cdef int32_t[:, ::1] ov = out
    cdef Py_ssize_t i, t
    cdef int64_t o, node
    with nogil:
        for t in range(T):
            o = offsets[t]
            for i in range(n):
                node = 0
                while feature[o + node] >= 0:
                    if Xv[i, feature[o + node]] <= threshold[o + node]:
                        node = left[o + node]
                    else:
                        node = right[o + node]
                ov[i, t] = <int32_t>node
    return out
