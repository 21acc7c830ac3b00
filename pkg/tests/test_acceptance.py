"""Acceptance suite.

Every criterion runs at its stated tolerance and records one line,
``PASS criterion N: ...`` or ``FAIL criterion N: ...``. The lines are printed
as they happen (visible with ``-s``) and repeated in the terminal summary.

The ordinal and calibration criteria (7, 8, 10) share one set of five
benchmark runs, fitted once per session (about 5 minutes on one core).
"""

import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from enspost import _kernels
from enspost.boosting import fit_boost_station
from enspost.data import FeatureSpec, ForecastDataset, StationTable
from enspost.emos import fit_emos
from enspost.experiment import RAW, run_benchmark
from enspost.importance import PermutationPlan, permutation_importance
from enspost.network import VARIANTS, NetworkConfig, backward, count_parameters, init_params, loss
from enspost.qrf import default_levels, fit_qrf, fit_station_forest, predict_cdf, predict_quantiles_array
from enspost.scoring import crps_normal, crps_normal_grad, std_normal_cdf
from enspost.verification import bh_procedure, dm_test, pairwise_significance_matrix

RESULTS = []
BENCH_SEEDS = range(5)


@contextmanager
def criterion(n, title):
    """Record PASS/FAIL for criterion ``n``; yields a dict for the detail text."""
    info = {"detail": ""}
    t0 = time.perf_counter()
    try:
        yield info
    except AssertionError as exc:
        line = f"FAIL criterion {n}: {title} ({time.perf_counter() - t0:.1f} s): {exc}"
        RESULTS.append(line)
        print(line)
        raise
    line = f"PASS criterion {n}: {title} ({time.perf_counter() - t0:.1f} s) {info['detail']}".rstrip()
    RESULTS.append(line)
    print(line)


# --------------------------------------------------------------------------
# 1. CRPS kernel
# --------------------------------------------------------------------------

def crps_trapezoid(mu, sigma, y, n=200_001):
    """Trapezoid rule for the integral of (F(z) - 1{y <= z})^2, split at y."""
    lo, hi = min(mu - 12 * sigma, y), max(mu + 12 * sigma, y)
    zl = np.linspace(lo, y, n)
    zr = np.linspace(y, hi, n)
    left = np.trapezoid(std_normal_cdf((zl - mu) / sigma) ** 2, zl)
    right = np.trapezoid((1 - std_normal_cdf((zr - mu) / sigma)) ** 2, zr)
    return left + right


def test_criterion_1_crps_kernel():
    with criterion(1, "CRPS closed form vs trapezoid integration and finite differences") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        mu = rng.normal(0, 5, 100)
        sigma = rng.uniform(0.1, 5, 100)
        y = mu + sigma * rng.normal(0, 2, 100)
        got = crps_normal(mu, sigma, y)
        ref = np.array([crps_trapezoid(*c) for c in zip(mu, sigma, y)])
        err = float(np.max(np.abs(got - ref)))
        assert err <= 1e-6, f"max |closed form - trapezoid| = {err:.2e}"
        d_mu, d_sigma = crps_normal_grad(mu, sigma, y)
        h = 1e-6
        fd_mu = (crps_normal(mu + h, sigma, y) - crps_normal(mu - h, sigma, y)) / (2 * h)
        fd_sigma = (crps_normal(mu, sigma + h, y) - crps_normal(mu, sigma - h, y)) / (2 * h)
        gerr = float(max(np.max(np.abs(d_mu - fd_mu)), np.max(np.abs(d_sigma - fd_sigma))))
        assert gerr <= 1e-6, f"max gradient error {gerr:.2e}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 5, f"took {elapsed:.1f} s"
        info["detail"] = f"value err {err:.1e}, gradient err {gerr:.1e}"


# --------------------------------------------------------------------------
# 2. Network gradients
# --------------------------------------------------------------------------

def _random_net(variant, seed, S=7, hidden=6):
    cfg = NetworkConfig(variant=variant, hidden_nodes=hidden, n_emb=2)
    rng = np.random.default_rng(seed)
    p = 40 if cfg.aux else 2
    params = init_params(p, S, cfg.hidden_nodes, cfg.n_emb, rng)
    for v in params.arrays.values():
        v += rng.normal(scale=0.5, size=v.shape)
    params.y_shift, params.y_scale = float(rng.normal()), float(rng.uniform(0.5, 2.0))
    X = rng.normal(size=(8, p))
    station = rng.integers(0, S, 8)
    y = rng.normal(params.y_shift, 2.0, size=8)
    return params, X, station, y


def _finite_difference(params, X, station, y, h):
    out = {}
    for k, arr in params.arrays.items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss(params, X, station, y)
            arr[idx] = old - h
            down = loss(params, X, station, y)
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[k] = g
    return out


def test_criterion_2_network_gradients():
    with criterion(2, "network backward vs finite differences, all variants x 20 seeds") as info:
        t0 = time.perf_counter()
        worst = 0.0
        for variant in VARIANTS:
            for seed in range(20):
                params, X, station, y = _random_net(variant, seed)
                _, grads = backward(params, X, station, y)
                fd = _finite_difference(params, X, station, y, h=1e-5)
                for k in grads:
                    # relative error; 1e-6 keeps exact zeros (unused embedding rows) well defined
                    den = np.maximum(np.maximum(np.abs(grads[k]), np.abs(fd[k])), 1e-6)
                    worst = max(worst, float(np.max(np.abs(grads[k] - fd[k]) / den)))
        assert worst <= 1e-4, f"worst relative error {worst:.2e}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 30, f"took {elapsed:.1f} s"
        info["detail"] = f"worst relative error {worst:.1e} over {len(VARIANTS) * 20} networks"


# --------------------------------------------------------------------------
# 3. Parameter counts
# --------------------------------------------------------------------------

def test_criterion_3_parameter_counts():
    # 40 inputs: t2m mean/sd plus mean/sd of 18 auxiliary variables
    with criterion(3, "parameter counts for S=537 stations, 2-dim embeddings") as info:
        got = {
            "FCN": count_parameters(2),
            "FCN-aux": count_parameters(40),
            "FCN-emb": count_parameters(2, 537, 0, 2),
            "FCN-aux-emb": count_parameters(40, 537, 0, 2),
            "NN-aux-emb": count_parameters(40, 537, 512, 2),
        }
        want = {"FCN": 6, "FCN-aux": 82, "FCN-emb": 1084, "FCN-aux-emb": 1160, "NN-aux-emb": 24116}
        assert got == want, f"{got} != {want}"
        # 24116 corresponds to 512 hidden units; 50 hidden units give 3326
        assert count_parameters(40, 537, 50, 2) == 3326
        assert count_parameters(40, 0, 50, 0) == 2152
        info["detail"] = "6/82/1084/1160/24116 (NN-aux-emb with 512 hidden units)"


# --------------------------------------------------------------------------
# 4. EMOS recovery
# --------------------------------------------------------------------------

def _affine(n, seed, truth):
    rng = np.random.default_rng(seed)
    a, b, c, d = truth
    m = rng.normal(5.0, 4.0, n)
    s = rng.gamma(2.0, 0.75, n)
    y = a + b * m + (c + d * s) * rng.normal(size=n)
    return ForecastDataset(StationTable(["s0"], [0.0], [0.0], [0.0]), np.zeros(n, dtype=int),
                           np.datetime64("2000-01-01") + np.arange(n), np.column_stack([m, s]), y,
                           FeatureSpec.t2m_only())


def test_criterion_4_emos_recovery():
    with criterion(4, "EMOS recovers affine truth within 0.05 on 50k samples") as info:
        t0 = time.perf_counter()
        truth = np.array([1.0, 1.0, 0.5, 0.5])
        errs = [float(np.max(np.abs(fit_emos(_affine(50_000, seed, truth), "global").coef - truth)))
                for seed in range(10)]
        ok = sum(e <= 0.05 for e in errs)
        assert ok >= 9, f"only {ok}/10 seeds within 0.05 (errors {np.round(errs, 3)})"
        elapsed = time.perf_counter() - t0
        assert elapsed < 60, f"took {elapsed:.1f} s"
        info["detail"] = f"{ok}/10 seeds, worst error {max(errs):.3f}"


# --------------------------------------------------------------------------
# 5. Boosting sparsity
# --------------------------------------------------------------------------

def test_criterion_5_boosting_sparsity():
    with criterion(5, "boosting selects true predictors, LogS non-increasing") as info:
        t0 = time.perf_counter()
        truth = {("beta", 0), ("beta", 1), ("gamma", 3)}
        precisions = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            Z = rng.normal(size=(500, 10))
            Z = (Z - Z.mean(0)) / Z.std(0)
            y = 2 + 1.5 * Z[:, 0] - 0.8 * Z[:, 1] + np.exp(0.4 * Z[:, 3]) * rng.normal(size=500)
            c = fit_boost_station(Z, y)
            sel = ({("beta", j) for j in np.flatnonzero(c.beta[1:])}
                   | {("gamma", j) for j in np.flatnonzero(c.gamma[1:])})
            precisions.append(len(sel & truth) / max(len(sel), 1))
            steps = np.diff(c.logs_trace)
            assert np.all(steps <= 0), f"seed {seed}: LogS rose by {steps.max():.2e}"
        assert min(precisions) >= 0.9, f"precisions {precisions}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 120, f"took {elapsed:.1f} s"
        info["detail"] = f"min precision {min(precisions):.2f} over 10 seeds"


# --------------------------------------------------------------------------
# 6. QRF oracle
# --------------------------------------------------------------------------

def _naive_leaf_rows(forest, t, x):
    a, m0 = forest.node_offsets[t], forest.member_offsets[t]
    node = 0
    while forest.feature[a + node] >= 0:
        f = forest.feature[a + node]
        node = forest.left[a + node] if x[f] <= forest.threshold[a + node] else forest.right[a + node]
    s, c = forest.leaf_start[a + node], forest.leaf_count[a + node]
    return forest.members[m0 + s:m0 + s + c]


def _naive_cdf(forest, x, v):
    total = Fraction(0)
    for t in range(forest.n_trees):
        rows = _naive_leaf_rows(forest, t, x)
        total += Fraction(int(sum(forest.y_train[r] <= v for r in rows)), len(rows))
    return total / forest.n_trees


def _naive_quantile(forest, x, level):
    for v in np.unique(forest.y_train):
        if _naive_cdf(forest, x, v) >= Fraction(level) - Fraction(1e-12):
            return float(v)
    return float(forest.y_train.max())


def _one_station(X, y):
    n = len(y)
    names = tuple(f"x{j}" for j in range(X.shape[1]))
    return ForecastDataset(StationTable(["s0"], [0.0], [0.0], [0.0]), np.zeros(n, dtype=int),
                           np.datetime64("2000-01-01") + np.arange(n), X, y, FeatureSpec(names))


def test_criterion_6_qrf_oracle():
    with criterion(6, "QRF leaf CDF and quantiles vs naive enumeration; 1e4 probes") as info:
        t0 = time.perf_counter()
        cdf_err, checked = 0.0, 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(8, 21))
            X = np.round(rng.normal(size=(n, 3)), 1)
            y = np.round(rng.normal(size=n), 1)
            forest = fit_station_forest(X, y, n_trees=7, min_leaf_size=2, mtry=2, seed=seed)
            model = fit_qrf(_one_station(X, y), n_trees=7, min_leaf_size=2, mtry=2, seed=seed)
            probes = np.round(rng.normal(size=(6, 3)), 1)
            leaves = _kernels.apply_forest(forest.feature, forest.threshold, forest.left, forest.right,
                                           forest.node_offsets, probes)
            thresholds = np.unique(y)
            cdf = predict_cdf(forest, probes, thresholds)
            levels = default_levels(9)
            q = predict_quantiles_array(model, probes, 0, levels)
            for i, x in enumerate(probes):
                for t in range(forest.n_trees):
                    node = forest.node_offsets[t] + leaves[i, t]
                    m0 = forest.member_offsets[t] + forest.leaf_start[node]
                    got = forest.members[m0:m0 + forest.leaf_count[node]]
                    assert sorted(got) == sorted(_naive_leaf_rows(forest, t, x)), "leaf membership differs"
                for k, v in enumerate(thresholds):
                    exact = _naive_cdf(forest, x, v)
                    # the fast path sums floats; the oracle is a rational number
                    cdf_err = max(cdf_err, abs(cdf[i, k] - float(exact)))
                    assert cdf_err <= 1e-14, f"CDF differs by {cdf_err:.1e}"
                want = [_naive_quantile(forest, x, lv) for lv in levels]
                assert list(q[i]) == want, f"quantiles {list(q[i])} != {want}"
                checked += 1
        # monotone and in range on 10^4 probes
        rng = np.random.default_rng(99)
        X = rng.normal(size=(400, 5))
        y = X[:, 0] + 0.5 * rng.normal(size=400)
        model = fit_qrf(_one_station(X, y), n_trees=50, min_leaf_size=5, seed=1)
        q = predict_quantiles_array(model, rng.normal(scale=3, size=(10_000, 5)), 0)
        assert np.all(np.diff(q, axis=1) >= 0), "non-monotone quantiles"
        assert q.min() >= y.min() and q.max() <= y.max(), "quantile outside the training range"
        elapsed = time.perf_counter() - t0
        assert elapsed < 60, f"took {elapsed:.1f} s"
        info["detail"] = f"{checked} probes exact (max CDF float error {cdf_err:.0e}); 1e4 probes monotone"


# --------------------------------------------------------------------------
# 7, 8, 10. Synthetic benchmark
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def benchmark_runs():
    t0 = time.perf_counter()
    runs = [run_benchmark(seed) for seed in BENCH_SEEDS]
    return runs, time.perf_counter() - t0


def test_criterion_7_ordinal_results(benchmark_runs):
    runs, seconds = benchmark_runs
    with criterion(7, "ordinal model ranking on the synthetic benchmark, 5 seeds") as info:
        names = runs[0].report.names
        mean = {n: float(np.mean([r.report.overall[n] for r in runs])) for n in names}
        models = [n for n in names if n != RAW]
        worse = [n for n in models if not mean[n] < mean[RAW]]
        assert not worse, f"(a) not better than raw: {worse}"
        gap = mean["fcn"] / mean["emos-gl"] - 1
        assert abs(gap) <= 0.03, f"(b) FCN vs EMOS-gl {100 * gap:+.2f}%"
        assert mean["emos-loc"] < mean["emos-gl"], "(c) EMOS-loc not better than EMOS-gl"
        assert mean["fcn-emb"] < mean["fcn"], "(c) FCN-emb not better than FCN"
        best = [r.report.best_overall() for r in runs]
        wins = best.count("nn-aux-emb")
        assert wins >= 4, f"(d) NN-aux-emb best in {wins}/5 seeds ({best})"
        assert seconds < 15 * 60, f"benchmark took {seconds:.0f} s"
        info["detail"] = (f"raw {mean[RAW]:.3f}, emos-gl {mean['emos-gl']:.3f}, fcn {100 * gap:+.2f}%, "
                          f"nn-aux-emb {mean['nn-aux-emb']:.3f} best in {wins}/5; {seconds:.0f} s")


def test_criterion_8_calibration(benchmark_runs):
    runs, _ = benchmark_runs
    with criterion(8, "post-processed histograms flatter than raw; spread-error shift") as info:
        sers = []
        for r in runs:
            rep = r.report
            raw_chi2 = rep.histograms[RAW].chi2
            for n in rep.names:
                if n != RAW:
                    assert rep.histograms[n].chi2 < raw_chi2, \
                        f"seed {r.seed}: {n} chi2 {rep.histograms[n].chi2:.1f} >= raw {raw_chi2:.1f}"
            assert rep.spread_error[RAW] < 0.7, f"seed {r.seed}: raw ratio {rep.spread_error[RAW]:.2f}"
            s = rep.spread_error["nn-aux-emb"]
            assert 0.85 <= s <= 1.1, f"seed {r.seed}: NN-aux-emb ratio {s:.3f}"
            sers.append((rep.spread_error[RAW], s))
        raw_s, nn_s = np.array(sers).T
        info["detail"] = (f"spread-error raw {raw_s.min():.2f}-{raw_s.max():.2f}, "
                          f"nn-aux-emb {nn_s.min():.3f}-{nn_s.max():.3f}")


def test_criterion_10_importance(benchmark_runs):
    runs, _ = benchmark_runs
    with criterion(10, "permutation importance sanity for NN-aux-emb") as info:
        firsts = []
        for r in runs:
            model, valid = r.models["nn-aux-emb"], r.valid
            zero = permutation_importance(model, valid, PermutationPlan.identity(valid.n))
            assert np.all(zero.values == 0.0), f"seed {r.seed}: identity permutation gives {zero.values.max()}"
            rep = permutation_importance(model, valid, PermutationPlan.from_seed(valid.n, r.seed))
            firsts.append(rep.ranked()[0][0])
        hits = firsts.count("t2m_mean")
        assert hits == 5, f"t2m_mean first in {hits}/5 seeds ({firsts})"
        info["detail"] = "identity permutation all zero; t2m_mean first in 5/5 seeds"


# --------------------------------------------------------------------------
# 9. Significance machinery
# --------------------------------------------------------------------------

def test_criterion_9_significance():
    with criterion(9, "DM null size, BH example, dominance matrix") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(9)
        trials = 10_000
        p = np.array([dm_test(rng.normal(size=365), rng.normal(size=365)).p_value for _ in range(trials)])
        rate = float(np.mean(p < 0.05))
        assert abs(rate - 0.05) <= 0.01, f"null rejection rate {100 * rate:.2f}%"
        bh = bh_procedure([0.01, 0.02, 0.04], 0.05)
        assert bh.rejected.all(), "BH example should reject all three"
        base = rng.uniform(0.5, 1.5, size=20 * 365)
        station = np.repeat(np.arange(20), 365)
        m = pairwise_significance_matrix([base - 0.5, base], station, 0.05)
        assert m[0, 1] == 100.0, f"dominance entry {m[0, 1]}"
        elapsed = time.perf_counter() - t0
        assert elapsed < 60, f"took {elapsed:.1f} s"
        info["detail"] = f"null rejection {100 * rate:.2f}%, BH rejects all, dominance {m[0, 1]:.0f}%"
