"""Local quantile regression forests.

One forest per station. Trees are CART regression trees grown on bootstrap
resamples with a random feature subset per split; leaves keep the indices of
their training observations, and predictions average the leaf empirical CDFs
over trees before inverting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import ForecastDataset
from .errors import DimensionMismatch, InvalidConfig, NonMonotoneQuantiles, TooFewSamples
from .scoring import QuantileForecast, crps_quantile_approx

_CDF_TOL = 1e-12


def default_levels(K: int = 51) -> np.ndarray:
    return np.arange(1, K + 1) / (K + 1)


@dataclass
class StationForest:
    """Flattened trees of one station.

    Node arrays of tree ``t`` live at ``node_offsets[t]:node_offsets[t+1]``
    (child ids are tree-local); leaf members of tree ``t`` start at
    ``member_offsets[t]`` and index into ``y_train``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_start: np.ndarray
    leaf_count: np.ndarray
    members: np.ndarray
    node_offsets: np.ndarray
    member_offsets: np.ndarray
    y_train: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.node_offsets) - 1

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class ForestModel:
    forests: dict              # station position -> StationForest
    n_trees: int
    mtry: int
    min_leaf_size: int
    seed: int
    p: int
    bootstrap: bool = True
    max_depth: int = -1
    levels: np.ndarray = field(default_factory=default_levels)

    def station_forest(self, s: int) -> StationForest:
        try:
            return self.forests[int(s)]
        except KeyError:
            raise TooFewSamples(f"no forest was fitted for station {s}") from None


def fit_station_forest(X, y, n_trees=200, min_leaf_size=10, mtry=None, seed=0,
                       station=0, bootstrap=True, max_depth=-1) -> StationForest:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    N, p = X.shape
    mtry = math.ceil(p / 2) if mtry is None else int(mtry)
    if n_trees < 1 or not (1 <= mtry <= p) or min_leaf_size < 1:
        raise InvalidConfig("need n_trees >= 1, 1 <= mtry <= p and min_leaf_size >= 1")
    if N < 2 * min_leaf_size:
        raise TooFewSamples(f"station {station}: {N} samples < 2 * min_leaf_size")
    pre = _kernels.presort(X)
    parts = []
    for t in range(n_trees):
        if bootstrap:
            sample = np.random.default_rng([seed, station, t]).integers(0, N, N)
        else:
            sample = np.arange(N)
        parts.append(_kernels.build_tree(X, y, sample, mtry, min_leaf_size, seed + t,
                                         max_depth, presorted=pre))
    node_off = np.zeros(n_trees + 1, dtype=np.int64)
    mem_off = np.zeros(n_trees + 1, dtype=np.int64)
    node_off[1:] = np.cumsum([len(pt[0]) for pt in parts])
    mem_off[1:] = np.cumsum([len(pt[6]) for pt in parts])
    cat = [np.concatenate([pt[i] for pt in parts]) for i in range(7)]
    return StationForest(*cat, node_offsets=node_off, member_offsets=mem_off, y_train=y.copy())


def fit_qrf(train: ForecastDataset, n_trees=200, min_leaf_size=10, mtry=None, seed=0,
            bootstrap=True, max_depth=-1, levels=None) -> ForestModel:
    p = train.feature_spec.p
    mtry = math.ceil(p / 2) if mtry is None else int(mtry)
    forests = {}
    for s in np.unique(train.station):
        rows = train.station_rows(s)
        forests[int(s)] = fit_station_forest(
            train.X[rows], train.y[rows], n_trees, min_leaf_size, mtry, seed,
            station=int(s), bootstrap=bootstrap, max_depth=max_depth)
    return ForestModel(forests, n_trees, mtry, min_leaf_size, seed, p, bootstrap, max_depth,
                       default_levels() if levels is None else np.asarray(levels, dtype=float))


def leaf_weights(forest: StationForest, X) -> np.ndarray:
    """Dense (n, N_train) weights of the averaged leaf empirical CDFs."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    N = len(forest.y_train)
    T = forest.n_trees
    leaves = _kernels.apply_forest(forest.feature, forest.threshold, forest.left, forest.right,
                                   forest.node_offsets, X)
    gnode = forest.node_offsets[:-1][None, :] + leaves
    starts = (forest.member_offsets[:-1][None, :] + forest.leaf_start[gnode]).ravel()
    counts = forest.leaf_count[gnode].ravel().astype(np.int64)
    seg = np.repeat(np.arange(n * T), counts)
    seg_first = np.cumsum(counts) - counts
    within = np.arange(counts.sum()) - np.repeat(seg_first, counts)
    rows = forest.members[starts[seg] + within]
    w = 1.0 / (T * counts[seg])
    sample = seg // T
    return np.bincount(sample * N + rows, weights=w, minlength=n * N).reshape(n, N)


def predict_cdf(forest: StationForest, X, thresholds) -> np.ndarray:
    """Combined CDF evaluated at ``thresholds`` for each row of ``X``."""
    W = leaf_weights(forest, X)
    t = np.asarray(thresholds, dtype=float)
    ind = forest.y_train[None, :] <= t[:, None]
    return W @ ind.T.astype(float)


def _quantiles_from_weights(W, y_train, levels):
    order = np.argsort(y_train, kind="stable")
    ys = y_train[order]
    cdf = np.cumsum(W[:, order], axis=1)
    out = np.empty((W.shape[0], len(levels)))
    for i in range(W.shape[0]):
        j = np.searchsorted(cdf[i], np.asarray(levels) - _CDF_TOL, side="left")
        out[i] = ys[np.minimum(j, len(ys) - 1)]
    return out


def _check_levels(levels):
    lv = np.asarray(levels, dtype=float)
    if lv.ndim != 1 or lv.size == 0 or np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0):
        raise NonMonotoneQuantiles("levels must be strictly increasing inside (0, 1)")
    return lv


def predict_quantiles_array(model: ForestModel, X, station, levels=None) -> np.ndarray:
    """Quantiles (n, K) by generalized (left-continuous) inversion."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.p:
        raise DimensionMismatch(f"expected {model.p} predictors, got {X.shape[1]}")
    levels = _check_levels(model.levels if levels is None else levels)
    station = np.broadcast_to(np.asarray(station), (X.shape[0],))
    out = np.empty((X.shape[0], len(levels)))
    for s in np.unique(station):
        rows = np.flatnonzero(station == s)
        forest = model.station_forest(s)
        for chunk in np.array_split(rows, max(1, len(rows) // 512)):
            W = leaf_weights(forest, X[chunk])
            out[chunk] = _quantiles_from_weights(W, forest.y_train, levels)
    return out


def predict_quantiles(model: ForestModel, x, station, levels) -> QuantileForecast:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DimensionMismatch("predict_quantiles takes a single predictor vector")
    vals = predict_quantiles_array(model, x[None, :], [station], levels)[0]
    return QuantileForecast(tuple(levels), tuple(vals))


def crps_qrf(model: ForestModel, ds: ForecastDataset) -> np.ndarray:
    q = predict_quantiles_array(model, ds.X, ds.station)
    return crps_quantile_approx(q, ds.y)
