"""Compare the compiled and pure-Python tree kernels.

Grows the trees of one station forest with each backend, checks that both
produce identical trees and leaf assignments, and reports the time per tree.

    python3 benchmarks/bench_tree.py [--trees 50] [--samples 730] [--features 40]
"""

import argparse
import time

import numpy as np

from enspost import _tree_py

try:
    from enspost import _tree
except ImportError:
    _tree = None


def grow(mod, X, y, n_trees, mtry, min_leaf, seed):
    pre = mod.presort(X)
    N = len(y)
    trees = []
    t0 = time.perf_counter()
    for t in range(n_trees):
        sample = np.random.default_rng([seed, 0, t]).integers(0, N, N)
        trees.append(mod.build_tree(X, y, sample, mtry, min_leaf, seed + t, -1, presorted=pre))
    return trees, time.perf_counter() - t0


def apply(mod, trees, X):
    off = np.zeros(len(trees) + 1, dtype=np.int64)
    off[1:] = np.cumsum([len(t[0]) for t in trees])
    cat = [np.concatenate([t[i] for t in trees]) for i in range(4)]
    t0 = time.perf_counter()
    leaves = mod.apply_forest(*cat, off, X)
    return leaves, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trees", type=int, default=50)
    ap.add_argument("--samples", type=int, default=730)
    ap.add_argument("--features", type=int, default=40)
    ap.add_argument("--min-leaf", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    rng = np.random.default_rng(a.seed)
    X = np.ascontiguousarray(rng.normal(size=(a.samples, a.features)))
    y = X[:, 0] + np.sin(2 * X[:, 1]) + 0.5 * rng.normal(size=a.samples)
    probes = np.ascontiguousarray(rng.normal(size=(2000, a.features)))
    mtry = (a.features + 1) // 2

    py_trees, py_build = grow(_tree_py, X, y, a.trees, mtry, a.min_leaf, a.seed)
    py_leaves, py_apply = apply(_tree_py, py_trees, probes)
    print(f"{'backend':>10}  {'build ms/tree':>14}  {'apply ms':>9}")
    print(f"{'python':>10}  {1e3 * py_build / a.trees:14.2f}  {1e3 * py_apply:9.2f}")
    if _tree is None:
        print("compiled kernels are not built; nothing to compare")
        return
    c_trees, c_build = grow(_tree, X, y, a.trees, mtry, a.min_leaf, a.seed)
    c_leaves, c_apply = apply(_tree, c_trees, probes)
    print(f"{'compiled':>10}  {1e3 * c_build / a.trees:14.2f}  {1e3 * c_apply:9.2f}")
    same = all(np.array_equal(u, v) for ta, tb in zip(py_trees, c_trees) for u, v in zip(ta, tb))
    same &= np.array_equal(py_leaves, c_leaves)
    print(f"speed-up: build x{py_build / c_build:.1f}, apply x{py_apply / max(c_apply, 1e-9):.1f}; "
          f"identical output: {same}")


if __name__ == "__main__":
    main()
