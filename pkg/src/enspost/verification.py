"""Calibration diagnostics, score aggregation and significance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateVariance,
    EmptyDataset,
    GridMismatch,
    InvalidAlpha,
    InvalidConfig,
    LengthMismatch,
    TooFewSamples,
    ZeroError,
)
from .scoring import GaussianForecast, std_normal_cdf

PIT_BINS = 20
DM_LAG = 2
_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class HistogramResult:
    kind: str                  # "rank" or "PIT"
    counts: np.ndarray
    K: int
    n: int

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / max(self.n, 1)

    @property
    def chi2(self) -> float:
        """Pearson chi-square distance from the uniform histogram."""
        return chi_square_uniform(self.counts)


def chi_square_uniform(counts) -> float:
    c = np.asarray(counts, dtype=float)
    expected = c.sum() / len(c)
    if expected <= 0:
        return 0.0
    return float(np.sum((c - expected) ** 2) / expected)


def _same_length(*arrays):
    lengths = {len(a) for a in arrays}
    if len(lengths) != 1:
        raise LengthMismatch(f"inputs have different lengths {sorted(lengths)}")


def ranks(ensembles, observations, seed: int = 0) -> np.ndarray:
    """Rank (1-based) of each observation among its pooled ensemble."""
    ens = np.asarray(ensembles, dtype=float)
    y = np.asarray(observations, dtype=float)
    if ens.ndim != 2:
        raise InvalidConfig("ensembles must be an (n, m) array")
    _same_length(ens, y)
    below = np.sum(ens < y[:, None], axis=1)
    ties = np.sum(ens == y[:, None], axis=1)
    rng = np.random.default_rng(seed)
    return 1 + below + rng.integers(0, ties + 1)


def rank_histogram(ensembles, observations, seed: int = 0) -> HistogramResult:
    """Verification rank histogram with m + 1 bins; ties are broken at random."""
    r = ranks(ensembles, observations, seed)
    m = np.shape(ensembles)[1]
    counts = np.bincount(r - 1, minlength=m + 1)
    return HistogramResult("rank", counts, m + 1, len(r))


def _gaussian_arrays(forecasts, sigma=None):
    if sigma is not None:
        return np.asarray(forecasts, dtype=float), np.asarray(sigma, dtype=float)
    if len(forecasts) and isinstance(forecasts[0], GaussianForecast):
        return (np.array([f.mu for f in forecasts], dtype=float),
                np.array([f.sigma for f in forecasts], dtype=float))
    mu, sg = forecasts
    return np.asarray(mu, dtype=float), np.asarray(sg, dtype=float)


def pit_values(forecasts, observations, sigma=None) -> np.ndarray:
    mu, sg = _gaussian_arrays(forecasts, sigma)
    y = np.asarray(observations, dtype=float)
    _same_length(mu, sg, y)
    return std_normal_cdf((y - mu) / sg)


def pit_histogram(forecasts, observations, K: int = PIT_BINS, sigma=None) -> HistogramResult:
    """PIT histogram with K equal bins on [0, 1].

    ``forecasts`` is a list of :class:`GaussianForecast`, a ``(mu, sigma)``
    pair, or the mean array with ``sigma`` passed separately.
    """
    if K < 1:
        raise InvalidConfig("K must be >= 1")
    u = pit_values(forecasts, observations, sigma)
    idx = np.minimum((u * K).astype(np.int64), K - 1)
    return HistogramResult("PIT", np.bincount(idx, minlength=K), K, len(u))


def spread_error_ratio(spread, mean, observations) -> float:
    """Mean predictive spread over the RMSE of the predictive mean."""
    s = np.asarray(spread, dtype=float)
    m = np.asarray(mean, dtype=float)
    y = np.asarray(observations, dtype=float)
    _same_length(s, m, y)
    if len(y) == 0:
        raise EmptyDataset("no samples")
    rmse = math.sqrt(float(np.mean((m - y) ** 2)))
    if rmse == 0:
        raise ZeroError("all forecast means are exact")
    return float(np.mean(s)) / rmse


@dataclass(frozen=True)
class StationMeans:
    stations: np.ndarray       # unique station keys in sorted order
    means: np.ndarray
    counts: np.ndarray
    overall: float


def mean_crps_by_station(scores, station) -> StationMeans:
    """Per-station means and the sample-weighted overall mean."""
    sc = np.asarray(scores, dtype=float)
    st = np.asarray(station)
    _same_length(sc, st)
    if len(sc) == 0:
        raise EmptyDataset("no scores")
    keys, inv = np.unique(st, return_inverse=True)
    counts = np.bincount(inv)
    means = np.bincount(inv, weights=sc) / counts
    return StationMeans(keys, means, counts, float(sc.mean()))


@dataclass(frozen=True)
class DmTestResult:
    t_n: float
    sigma_hat: float
    n: int
    p_value: float             # one-sided, small when the first forecast is better
    k: int
    mean_difference: float


def dm_test(scores_1, scores_2, k: int = DM_LAG) -> DmTestResult:
    """Diebold-Mariano test of equal accuracy for two aligned score series.

    The variance of the mean difference uses the sample autocovariances of
    the difference series up to lag ``k - 1``. Negative ``t_n`` favors the
    first forecast.
    """
    a = np.asarray(scores_1, dtype=float)
    b = np.asarray(scores_2, dtype=float)
    _same_length(a, b)
    n = len(a)
    if k < 1:
        raise InvalidConfig("lag k must be >= 1")
    if n < 2 * k:
        raise TooFewSamples(f"need n >= 2k = {2 * k}, got {n}")
    d = a - b
    dbar = float(d.mean())
    if np.ptp(d) <= 1e-12 * max(1.0, float(np.max(np.abs(d)))):
        raise DegenerateVariance(f"score differences are constant ({dbar:g})", mean_difference=dbar)
    dc = d - dbar
    var = float(dc @ dc) / n
    for h in range(1, k):
        var += 2.0 * float(dc[h:] @ dc[:-h]) / n
    sigma_hat = math.sqrt(max(var, _VAR_FLOOR))
    t = math.sqrt(n) * dbar / sigma_hat
    return DmTestResult(t, sigma_hat, n, float(std_normal_cdf(t)), k, dbar)


def dm_p_value(scores_1, scores_2, k: int = DM_LAG) -> float:
    """One-sided p-value for "first better", with constant differences resolved.

    A constant nonzero difference is decisive (0 or 1); identical series give 1.
    """
    try:
        return dm_test(scores_1, scores_2, k).p_value
    except DegenerateVariance as exc:
        return 0.0 if exc.mean_difference < 0 else 1.0


@dataclass(frozen=True)
class BhResult:
    alpha: float
    threshold: float
    rejected: np.ndarray
    ordered: np.ndarray

    @property
    def n_rejected(self) -> int:
        return int(self.rejected.sum())


def bh_procedure(p_values, alpha: float = 0.05) -> BhResult:
    """Benjamini-Hochberg step-up rule at level ``alpha``."""
    if not (0.0 < alpha < 1.0):
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise EmptyDataset("need at least one p-value")
    S = p.size
    ordered = np.sort(p)
    ok = ordered <= np.arange(1, S + 1) / S * alpha
    if not ok.any():
        return BhResult(alpha, 0.0, np.zeros(S, dtype=bool), ordered)
    p_star = float(ordered[np.flatnonzero(ok)[-1]])
    return BhResult(alpha, p_star, p <= p_star, ordered)


def pairwise_significance_matrix(scores: Sequence, station, alpha: float = 0.05,
                                 k: int = DM_LAG, dates: Optional[np.ndarray] = None) -> np.ndarray:
    """Percentage of stations where model i is significantly better than model j.

    ``scores`` holds one per-sample score array per model, all on the grid
    given by ``station`` (and ``dates``, used to order each station's series
    in time). Per pair, the one-sided tests of all stations are corrected
    with the Benjamini-Hochberg procedure.
    """
    arrs = [np.asarray(s, dtype=float) for s in scores]
    st = np.asarray(station)
    if any(a.shape != st.shape for a in arrs):
        raise GridMismatch("all models must be scored on the same (station, day) grid")
    order = np.lexsort((dates, st)) if dates is not None else np.argsort(st, kind="stable")
    st = st[order]
    arrs = [a[order] for a in arrs]
    keys, starts = np.unique(st, return_index=True)
    bounds = list(starts) + [len(st)]
    M = len(arrs)
    out = np.zeros((M, M))
    for i in range(M):
        for j in range(M):
            if i == j:
                continue
            p = [dm_p_value(arrs[i][lo:hi], arrs[j][lo:hi], k)
                 for lo, hi in zip(bounds[:-1], bounds[1:])]
            out[i, j] = 100.0 * bh_procedure(p, alpha).n_rejected / len(keys)
    return out
