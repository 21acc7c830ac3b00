"""Proper scoring rules and their gradients.

All functions are vectorized over numpy arrays. Public entry points reject
non-positive spreads; the ``*_clamped`` helpers used inside optimizers clamp
the spread at :data:`SIGMA_FLOOR` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import (
    EmptyEnsemble,
    NonMonotoneQuantiles,
    NonPositiveSigma,
    ZeroReference,
)

SIGMA_FLOOR = 1e-3
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianForecast:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise NonPositiveSigma(f"sigma must be positive, got {self.sigma}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")
        if self.sigma < SIGMA_FLOOR:
            object.__setattr__(self, "sigma", SIGMA_FLOOR)


@dataclass(frozen=True)
class QuantileForecast:
    levels: tuple
    values: tuple

    def __post_init__(self):
        levels = tuple(float(v) for v in self.levels)
        values = tuple(float(v) for v in self.values)
        if len(levels) != len(values) or not levels:
            raise NonMonotoneQuantiles("levels and values must be non-empty and of equal length")
        if any(not (0.0 < q < 1.0) for q in levels) or any(b <= a for a, b in zip(levels, levels[1:])):
            raise NonMonotoneQuantiles("levels must be strictly increasing inside (0, 1)")
        if any(b < a for a, b in zip(values, values[1:])):
            raise NonMonotoneQuantiles("quantile values must be nondecreasing")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)


def std_normal_pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(z))


def std_normal_cdf(z):
    return ndtr(z)


def _check_sigma(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if not np.all(sigma > 0):
        raise NonPositiveSigma("sigma must be strictly positive")
    return np.maximum(sigma, SIGMA_FLOOR)


def crps_normal_clamped(mu, sigma, y):
    sigma = np.maximum(np.asarray(sigma, dtype=float), SIGMA_FLOOR)
    z = (np.asarray(y, dtype=float) - mu) / sigma
    return sigma * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * std_normal_pdf(z) - _INV_SQRT_PI)


def crps_normal_grad_clamped(mu, sigma, y):
    """Partial derivatives of the CRPS in (mu, sigma).

    Below the floor the sigma derivative is zero because the clamped value no
    longer depends on the raw sigma.
    """
    sigma = np.asarray(sigma, dtype=float)
    below = sigma < SIGMA_FLOOR
    s = np.maximum(sigma, SIGMA_FLOOR)
    z = (np.asarray(y, dtype=float) - mu) / s
    d_mu = -(2.0 * ndtr(z) - 1.0)
    d_sigma = 2.0 * std_normal_pdf(z) - _INV_SQRT_PI
    return d_mu, np.where(below, 0.0, d_sigma)


def crps_normal(mu, sigma, y):
    """CRPS of a Gaussian predictive distribution, closed form.

    Examples
    --------
    >>> round(float(crps_normal(0.0, 1.0, 0.0)), 6)
    0.233695
    """
    return crps_normal_clamped(mu, _check_sigma(sigma), y)


def crps_normal_grad(mu, sigma, y):
    return crps_normal_grad_clamped(mu, _check_sigma(sigma), y)


def crps_ensemble(members, y):
    """CRPS of the empirical CDF of ``members`` (last axis) at ``y``.

    Uses the sorted-member identity
    ``sum_ij |x_i - x_j| = 2 * sum_i (2i - m - 1) x_(i)`` (1-based i), which
    is exact for the empirical CDF.
    """
    x = np.asarray(members, dtype=float)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise EmptyEnsemble("ensemble has no members")
    y = np.asarray(y, dtype=float)
    m = x.shape[-1]
    x = np.sort(x, axis=-1)
    abs_err = np.abs(x - y[..., None]).mean(axis=-1)
    w = 2.0 * np.arange(1, m + 1) - m - 1
    spread = (x * w).sum(axis=-1) / (m * m)
    return abs_err - spread


def crps_quantile_approx(values, y, levels=None):
    """Score K equally spaced quantiles k/(K+1) as a K-member ensemble.

    ``values`` may be a :class:`QuantileForecast`, a 1-d array or an (n, K)
    array. Quantile monotonicity is checked.
    """
    if isinstance(values, QuantileForecast):
        levels, values = values.levels, values.values
    v = np.asarray(values, dtype=float)
    if v.ndim == 0 or v.shape[-1] == 0:
        raise EmptyEnsemble("no quantiles")
    if np.any(np.diff(v, axis=-1) < 0):
        raise NonMonotoneQuantiles("quantile values must be nondecreasing")
    if levels is not None:
        K = v.shape[-1]
        expected = np.arange(1, K + 1) / (K + 1)
        if not np.allclose(np.asarray(levels, dtype=float), expected, atol=1e-12):
            raise NonMonotoneQuantiles("levels must be equally spaced k/(K+1)")
    return crps_ensemble(v, y)


def log_score_normal(mu, sigma, y):
    sigma = _check_sigma(sigma)
    z = (np.asarray(y, dtype=float) - mu) / sigma
    return _HALF_LOG_2PI + np.log(sigma) + 0.5 * z * z


def crpss(mean_crps_model, mean_crps_ref):
    """Skill of a model relative to a reference; positive is better."""
    ref = np.asarray(mean_crps_ref, dtype=float)
    if np.any(ref <= 0):
        raise ZeroReference("reference mean CRPS must be positive")
    out = 1.0 - np.asarray(mean_crps_model, dtype=float) / ref
    return float(out) if out.ndim == 0 else out
