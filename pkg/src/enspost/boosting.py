"""Local EMOS with gradient-boosting predictor selection.

Per station, ``mu = (1, x) . beta`` and ``log sigma = (1, x) . gamma``. All
coefficients start at zero. Each iteration computes the negative gradient of
the logarithmic score with respect to ``mu`` and ``log sigma``, picks the
single (predictor, parameter) pair whose column is most correlated with its
gradient, and moves that coefficient by ``step`` times the least-squares
slope of the (Fisher-scaled) negative gradient on the predictor. Intercepts
are refitted in closed form before the first update and every 10 updates.
Fitting stops when the training AIC stops improving or at ``max_iter``.

Predictors must be standardized with training statistics beforehand; the
four station features are never candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import STATION_FEATURES, ForecastDataset
from .errors import DimensionMismatch, InvalidConfig, NonFiniteLikelihood, TooFewSamples
from .scoring import GaussianForecast

LOG_SIGMA_CLAMP = 10.0
MIN_STATION_SAMPLES = 30
INTERCEPT_REFIT_EVERY = 10
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


@dataclass
class BoostCoefficients:
    beta: np.ndarray           # (p' + 1,), intercept first
    gamma: np.ndarray
    iterations_used: int = 0
    features: tuple = ()
    logs_trace: list = field(default_factory=list)   # mean LogS after each accepted step

    def nonzero(self) -> int:
        return int(np.count_nonzero(self.beta) + np.count_nonzero(self.gamma))


def _mean_logs(y, mu, log_sigma):
    z = (y - mu) * np.exp(-log_sigma)
    return float(np.mean(_HALF_LOG_2PI + log_sigma + 0.5 * z * z))


def _eta(Z, coef):
    return coef[0] + Z @ coef[1:]


def _state(Z, y, beta, gamma):
    mu = _eta(Z, beta)
    ls = np.clip(_eta(Z, gamma), -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    val = _mean_logs(y, mu, ls)
    if not math.isfinite(val):
        raise NonFiniteLikelihood("log-likelihood became non-finite")
    return mu, ls, val


def _aic(n, mean_logs, beta, gamma):
    df = np.count_nonzero(beta) + np.count_nonzero(gamma)
    return 2.0 * n * mean_logs + 2.0 * df


def _refit_intercepts(Z, y, beta, gamma):
    beta = beta.copy()
    gamma = gamma.copy()
    ls = np.clip(_eta(Z, gamma), -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP)
    w = np.exp(-2.0 * ls)
    beta[0] += np.sum(w * (y - _eta(Z, beta))) / np.sum(w)
    rest = ls - gamma[0]
    r = (y - _eta(Z, beta)) * np.exp(-rest)
    ms = np.mean(r * r)
    if ms > 0:
        gamma[0] = float(np.clip(0.5 * math.log(ms), -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
    return beta, gamma


def fit_boost_station(Z, y, max_iter=1000, step=0.05, stop="AIC", features=()):
    """Boosting fit on one station's standardized predictor matrix ``Z``."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = Z.shape
    if n < MIN_STATION_SAMPLES:
        raise TooFewSamples(f"boosting needs >= {MIN_STATION_SAMPLES} samples per station, got {n}")
    if stop not in ("AIC", "max_iter"):
        raise InvalidConfig(f"unknown stopping rule {stop!r}")
    beta = np.zeros(p + 1)
    gamma = np.zeros(p + 1)
    out = BoostCoefficients(beta, gamma, 0, tuple(features))
    if max_iter <= 0:
        return out

    Zc = Z - Z.mean(axis=0)
    col_ss = np.einsum("ij,ij->j", Zc, Zc)
    usable = col_ss > 1e-12 * n
    col_norm = np.sqrt(np.where(usable, col_ss, 1.0))

    mu, ls, cur = _state(Z, y, beta, gamma)
    best_aic = _aic(n, cur, beta, gamma)
    accepted = 0
    trace = []
    for it in range(max_iter):
        if it % INTERCEPT_REFIT_EVERY == 0:
            nb, ng = _refit_intercepts(Z, y, beta, gamma)
            _, _, val = _state(Z, y, nb, ng)
            if val <= cur:
                beta, gamma, cur = nb, ng, val
                best_aic = _aic(n, cur, beta, gamma)
                trace.append(cur)
            mu, ls, cur = _state(Z, y, beta, gamma)

        sig2 = np.exp(2.0 * ls)
        resid = y - mu
        neg_g = np.stack([resid / sig2, resid * resid / sig2 - 1.0])   # -dLogS/dmu, -dLogS/dlogsigma
        gc = neg_g - neg_g.mean(axis=1, keepdims=True)
        g_norm = np.sqrt(np.einsum("ij,ij->i", gc, gc))
        cov = gc @ Zc                                                   # (2, p)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = cov / (col_norm[None, :] * np.where(g_norm > 0, g_norm, 1.0)[:, None])
        corr[:, ~usable] = 0.0
        corr[g_norm <= 0, :] = 0.0
        flat = np.abs(corr).ravel()
        k = int(np.argmax(flat))
        if flat[k] <= 0:
            break
        which, j = divmod(k, p)
        # Fisher scaling: dmu working response = -g * mean(sigma^2); log sigma = -g / 2
        scale = np.mean(sig2) if which == 0 else 0.5
        slope = scale * cov[which, j] / col_ss[j]
        nb, ng = beta.copy(), gamma.copy()
        if which == 0:
            nb[j + 1] += step * slope
        else:
            ng[j + 1] += step * slope
        _, _, val = _state(Z, y, nb, ng)
        if stop == "AIC":
            new_aic = _aic(n, val, nb, ng)
            if not new_aic < best_aic:
                break
            best_aic = new_aic
        elif val > cur:
            break
        beta, gamma, cur = nb, ng, val
        mu, ls, _ = _state(Z, y, beta, gamma)
        accepted += 1
        trace.append(cur)
    return BoostCoefficients(beta, gamma, accepted, tuple(features), trace)


@dataclass
class BoostModel:
    coeffs: dict               # station position -> BoostCoefficients
    features: tuple            # candidate predictor names (station features excluded)
    max_iter: int = 1000
    step: float = 0.05
    stop: str = "AIC"


def boost_features(ds: ForecastDataset) -> tuple:
    return tuple(n for n in ds.feature_spec.names if n not in STATION_FEATURES)


def fit_emos_boost(train: ForecastDataset, max_iter=1000, step=0.05, stop="AIC") -> BoostModel:
    """Per-station boosting fits; ``train`` must already be standardized."""
    feats = boost_features(train)
    Z = train.columns(feats)
    coeffs = {}
    for s in np.unique(train.station):
        rows = train.station_rows(s)
        coeffs[int(s)] = fit_boost_station(Z[rows], train.y[rows], max_iter, step, stop, feats)
    return BoostModel(coeffs, feats, max_iter, step, stop)


def predict_emos_boost(coeffs: BoostCoefficients, x):
    """Gaussian forecast from standardized predictors (without station features)."""
    x = np.asarray(x, dtype=float)
    p = len(coeffs.beta) - 1
    if x.shape[-1] != p:
        raise DimensionMismatch(f"expected {p} predictors, got {x.shape[-1]}")
    mu = coeffs.beta[0] + x @ coeffs.beta[1:]
    sigma = np.exp(np.clip(coeffs.gamma[0] + x @ coeffs.gamma[1:], -LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP))
    if x.ndim == 1:
        return GaussianForecast(float(mu), float(sigma))
    return mu, sigma


def predict_dataset(model: BoostModel, ds: ForecastDataset):
    Z = ds.columns(model.features)
    mu = np.empty(ds.n)
    sigma = np.empty(ds.n)
    for s in np.unique(ds.station):
        rows = ds.station_rows(s)
        if int(s) not in model.coeffs:
            raise TooFewSamples(f"no boosting fit for station {ds.stations.ids[s]}")
        mu[rows], sigma[rows] = predict_emos_boost(model.coeffs[int(s)], Z[rows])
    return mu, sigma
