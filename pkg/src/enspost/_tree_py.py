"""Pure numpy regression-tree kernels (fallback for the compiled ``_tree``).

Both implementations must produce bit-identical trees: node order is
preorder with the left child first, candidate features are drawn with the
splitmix64 stream below, and prefix sums accumulate sequentially in sorted
order (``np.cumsum`` is sequential).
"""

import numpy as np

_MASK = (1 << 64) - 1


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, n):
        return self.next() % n


def _best_split(X, y, idx, feats, min_leaf):
    n = idx.shape[0]
    best = (np.inf, -1, 0.0)
    for f in feats:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ys = y[idx[order]]
        cs1 = np.cumsum(ys)
        cs2 = np.cumsum(ys * ys)
        t1 = cs1[n - 1]
        t2 = cs2[n - 1]
        nl = np.arange(min_leaf, n - min_leaf + 1)
        if nl.size == 0:
            continue
        ok = xs[nl - 1] < xs[nl]
        if not ok.any():
            continue
        s1 = cs1[nl - 1]
        s2 = cs2[nl - 1]
        nlf = nl.astype(np.float64)
        nrf = (n - nl).astype(np.float64)
        r1 = t1 - s1
        cost = (s2 - s1 * s1 / nlf) + ((t2 - s2) - r1 * r1 / nrf)
        cost = np.where(ok, cost, np.inf)
        k = int(np.argmin(cost))
        if cost[k] < best[0]:
            i = nl[k]
            a, b = xs[i - 1], xs[i]
            thr = 0.5 * (a + b)
            if thr >= b:
                thr = a
            best = (cost[k], int(f), float(thr))
    return best


def presort(X):
    """Per-feature row order by (value, row index); shape (p, N)."""
    X = np.asarray(X, dtype=np.float64)
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))


def build_tree(X, y, sample, mtry, min_leaf, seed, max_depth=-1, presorted=None):
    """Grow one regression tree on the rows listed in ``sample``.

    Returns ``(feature, threshold, left, right, leaf_start, leaf_count,
    members)``; ``feature == -1`` marks a leaf whose training rows are
    ``members[leaf_start:leaf_start + leaf_count]``. ``presorted`` is
    accepted for signature parity with the compiled kernel and ignored.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    p = X.shape[1]
    rng = SplitMix64(seed)
    feature, threshold, left, right, lstart, lcount = [], [], [], [], [], []
    members = []

    def grow(idx, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        lstart.append(-1)
        lcount.append(0)
        n = idx.shape[0]
        yi = y[idx]
        split = None
        if n >= 2 * min_leaf and yi.max() > yi.min() and (max_depth < 0 or depth < max_depth):
            perm = list(range(p))
            for i in range(mtry):
                j = i + rng.below(p - i)
                perm[i], perm[j] = perm[j], perm[i]
            cost, f, thr = _best_split(X, y, idx, perm[:mtry], min_leaf)
            if f >= 0:
                split = (f, thr)
        if split is None:
            lstart[node] = len(members)
            lcount[node] = n
            members.extend(idx.tolist())
            return node
        f, thr = split
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(np.sort(np.asarray(sample, dtype=np.int64)), 0)
    return (np.array(feature, dtype=np.int32), np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
            np.array(lstart, dtype=np.int32), np.array(lcount, dtype=np.int32),
            np.array(members, dtype=np.int32))


def apply_forest(feature, threshold, left, right, offsets, X):
    """Leaf node (tree-local id) reached by every row of ``X`` in every tree."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    T = len(offsets) - 1
    out = np.empty((n, T), dtype=np.int32)
    rows = np.arange(n)
    for t in range(T):
        o = offsets[t]
        node = np.zeros(n, dtype=np.int64)
        while True:
            f = feature[o + node]
            internal = f >= 0
            if not internal.any():
                break
            fi = np.where(internal, f, 0)
            go_left = X[rows, fi] <= threshold[o + node]
            nxt = np.where(go_left, left[o + node], right[o + node])
            node = np.where(internal, nxt, node)
        out[:, t] = node
    return out
