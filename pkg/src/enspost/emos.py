"""Ensemble model output statistics with minimum-CRPS estimation.

Gaussian predictive distribution with mean ``a + b * t2m_mean`` and standard
deviation ``c + d * t2m_std`` (clamped at the sigma floor). Coefficients are
fitted globally (pooled over stations) or locally (one set per station).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import ForecastDataset
from .errors import InvalidConfig, NonConvergenceWarning, TooFewSamples
from .scoring import (
    SIGMA_FLOOR,
    GaussianForecast,
    crps_normal_clamped,
    crps_normal_grad_clamped,
)

log = logging.getLogger(__name__)

MIN_GLOBAL_SAMPLES = 50
MIN_LOCAL_SAMPLES = 30
IDENTITY = (0.0, 1.0, 0.0, 1.0)
GTOL = 1e-6
MAX_ITER = 10_000


@dataclass
class EmosCoefficients:
    """``coef`` is (4,) for global scope and (S, 4) for local scope."""

    scope: str
    coef: np.ndarray
    converged: bool = True
    fallback_stations: list = field(default_factory=list)
    optimizer_log: dict = field(default_factory=dict)

    def for_stations(self, station) -> np.ndarray:
        if self.scope == "global":
            return np.broadcast_to(self.coef, (np.size(station), 4))
        return self.coef[np.asarray(station)]


def mean_crps_and_grad(coef, m, s, y):
    a, b, c, d = coef
    mu = a + b * m
    sigma = c + d * s
    crps = crps_normal_clamped(mu, sigma, y)
    g_mu, g_sigma = crps_normal_grad_clamped(mu, sigma, y)
    n = len(y)
    grad = np.array([g_mu.sum(), (g_mu * m).sum(), g_sigma.sum(), (g_sigma * s).sum()]) / n
    return crps.mean(), grad


def _minimize(m, s, y, x0=IDENTITY):
    res = minimize(mean_crps_and_grad, np.asarray(x0, dtype=float), args=(m, s, y), jac=True,
                   method="BFGS", options={"gtol": GTOL, "norm": np.inf, "maxiter": MAX_ITER})
    start, _ = mean_crps_and_grad(np.asarray(x0, dtype=float), m, s, y)
    x = res.x
    if not (res.fun <= start + 1e-12):
        x = np.asarray(x0, dtype=float)
    ok = bool(res.success) or np.max(np.abs(res.jac)) < GTOL
    return x, ok, {"nit": int(res.nit), "fun": float(min(res.fun, start)),
                   "message": str(res.message)}


def fit_emos(train: ForecastDataset, scope: str = "global") -> EmosCoefficients:
    """Minimum-CRPS fit of the four EMOS coefficients.

    BFGS from the identity start (0, 1, 0, 1); convergence when the gradient
    sup-norm drops below 1e-6. When the optimizer stops early the best iterate
    is kept and a :class:`NonConvergenceWarning` is issued. Local stations
    with fewer than 30 samples use the global coefficients.
    """
    if scope not in ("global", "local"):
        raise InvalidConfig(f"unknown EMOS scope {scope!r}")
    m = train.column("t2m_mean")
    s = train.column("t2m_std")
    y = train.y
    if scope == "global":
        if train.n < MIN_GLOBAL_SAMPLES:
            raise TooFewSamples(f"global EMOS needs >= {MIN_GLOBAL_SAMPLES} samples, got {train.n}")
        x, ok, info = _minimize(m, s, y)
        if not ok:
            warnings.warn(f"EMOS did not converge: {info['message']}", NonConvergenceWarning)
        return EmosCoefficients("global", x, ok, [], {"global": info})

    S = len(train.stations)
    coef = np.empty((S, 4))
    converged = True
    fallback = []
    logs = {}
    glob = None
    for st in range(S):
        rows = train.station_rows(st)
        if len(rows) < MIN_LOCAL_SAMPLES:
            if glob is None:
                glob = fit_emos(train, "global").coef
            coef[st] = glob
            fallback.append(st)
            continue
        x, ok, info = _minimize(m[rows], s[rows], y[rows])
        coef[st] = x
        converged &= ok
        logs[train.stations.ids[st]] = info
    if fallback:
        warnings.warn(f"{len(fallback)} stations have < {MIN_LOCAL_SAMPLES} samples; "
                      "using global coefficients", UserWarning)
    if not converged:
        warnings.warn("local EMOS did not converge at every station", NonConvergenceWarning)
    return EmosCoefficients("local", coef, converged, fallback, logs)


def predict_emos(coef, x_mean, x_sd):
    """Gaussian parameters (mu, sigma) for coefficient rows ``coef``.

    ``coef`` may be an :class:`EmosCoefficients` with global scope, a 4-tuple
    or an (n, 4) array aligned with the inputs.
    """
    if isinstance(coef, EmosCoefficients):
        coef = coef.coef
    c = np.asarray(coef, dtype=float)
    if c.ndim == 1:
        a, b, cc, d = c
    else:
        a, b, cc, d = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    mu = a + b * np.asarray(x_mean, dtype=float)
    sigma = np.maximum(cc + d * np.asarray(x_sd, dtype=float), SIGMA_FLOOR)
    if np.ndim(mu) == 0:
        return GaussianForecast(float(mu), float(sigma))
    return mu, sigma


def predict_dataset(coeffs: EmosCoefficients, ds: ForecastDataset):
    rows = coeffs.for_stations(ds.station)
    return predict_emos(rows, ds.column("t2m_mean"), ds.column("t2m_std"))
