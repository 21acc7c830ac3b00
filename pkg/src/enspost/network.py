"""Fully connected and one-hidden-layer networks trained on the Gaussian CRPS.

The output layer is linear and produces ``(mu_raw, sigma_raw)``; the spread
is ``max(|sigma_raw|, SIGMA_FLOOR)``. Optional station embeddings are
concatenated with the predictors before the first layer. Training uses Adam
on mini-batches, early stopping on a random 20 % holdout, and ensembles of
independently seeded runs whose (mu, sigma) are averaged.

Targets are shifted and scaled by the training mean and sd inside the model
(``y_shift``, ``y_scale``); CRPS is location-scale equivariant so this only
rescales the loss.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergedTraining, InvalidConfig, ShapeMismatch, TooFewSamples, UnknownStation
from .scoring import SIGMA_FLOOR, crps_normal_clamped, crps_normal_grad_clamped

log = logging.getLogger(__name__)

VARIANTS = ("FCN", "FCN-aux", "FCN-emb", "FCN-aux-emb", "NN-aux", "NN-aux-emb")
T2M_INPUTS = ("t2m_mean", "t2m_std")


@dataclass(frozen=True)
class NetworkConfig:
    variant: str = "NN-aux-emb"
    hidden_nodes: int = 32
    n_emb: int = 2
    epochs: int = 30
    learning_rate: float = 0.01
    batch_size: int = 256
    run_count: int = 10
    seed: int = 0
    early_stop_fraction: float = 0.2
    patience: int = 3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"unknown network variant {self.variant!r}")
        if not self.hidden:
            object.__setattr__(self, "hidden_nodes", 0)
        elif self.hidden_nodes < 1:
            raise InvalidConfig("NN variants need hidden_nodes >= 1")
        if not self.emb:
            object.__setattr__(self, "n_emb", 0)
        elif self.n_emb < 1:
            raise InvalidConfig("-emb variants need n_emb >= 1")
        if self.epochs < 1 or self.batch_size < 1 or self.run_count < 1 or self.patience < 0:
            raise InvalidConfig("epochs, batch_size and run_count must be >= 1, patience >= 0")
        if not (0.0 < self.early_stop_fraction < 1.0):
            raise InvalidConfig("early_stop_fraction must lie in (0, 1)")

    @property
    def aux(self) -> bool:
        return "aux" in self.variant

    @property
    def emb(self) -> bool:
        return self.variant.endswith("emb")

    @property
    def hidden(self) -> bool:
        return self.variant.startswith("NN")


def count_parameters(n_inputs: int, n_stations: int = 0, hidden: int = 0, n_emb: int = 0) -> int:
    """Learnable values: weights, biases and embedding entries."""
    d = n_inputs + n_emb
    emb = n_stations * n_emb
    if hidden:
        return emb + d * hidden + hidden + hidden * 2 + 2
    return emb + d * 2 + 2


@dataclass
class NetworkParams:
    arrays: dict                 # "emb", "W1", "b1", "W2", "b2" as applicable
    y_shift: float = 0.0
    y_scale: float = 1.0

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.arrays.items()}, self.y_shift, self.y_scale)

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


def init_params(n_inputs, n_stations, hidden, n_emb, rng) -> NetworkParams:
    a = {}
    if n_emb:
        a["emb"] = rng.uniform(-0.05, 0.05, size=(n_stations, n_emb))
    d = n_inputs + n_emb
    if hidden:
        lim = 1.0 / math.sqrt(d)
        a["W1"] = rng.uniform(-lim, lim, size=(d, hidden))
        a["b1"] = np.zeros(hidden)
        d = hidden
    lim = 1.0 / math.sqrt(d)
    a["W2"] = rng.uniform(-lim, lim, size=(d, 2))
    a["b2"] = np.array([0.0, 1.0])
    return NetworkParams(a)


def _forward_raw(params: NetworkParams, X, station):
    a = params.arrays
    h0 = X
    if "emb" in a:
        h0 = np.concatenate([X, a["emb"][station]], axis=1)
    pre = None
    h = h0
    if "W1" in a:
        pre = h0 @ a["W1"] + a["b1"]
        h = np.maximum(pre, 0.0)
    out = h @ a["W2"] + a["b2"]
    return out, (h0, pre, h)


def forward(params: NetworkParams, X, station=None):
    """Predictive (mu, sigma) arrays for standardized inputs ``X``.

    ``station`` holds embedding row indices and is required when the
    network has embeddings.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if "emb" in params.arrays:
        if station is None:
            raise UnknownStation("embedding network needs station indices")
        station = np.broadcast_to(np.asarray(station, dtype=np.int64), (X.shape[0],))
        S = params.arrays["emb"].shape[0]
        if np.any(station < 0) or np.any(station >= S):
            raise UnknownStation("station index outside the embedding table")
    out, _ = _forward_raw(params, X, station)
    mu = params.y_shift + params.y_scale * out[:, 0]
    sigma = np.maximum(params.y_scale * np.abs(out[:, 1]), SIGMA_FLOOR)
    return mu, sigma


def loss(params: NetworkParams, X, station, y) -> float:
    mu, sigma = forward(params, X, station)
    return float(np.mean(crps_normal_clamped(mu, sigma, y)))


def backward(params: NetworkParams, X, station, y):
    """Mean batch CRPS and its gradient with respect to every parameter array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    B = X.shape[0]
    a = params.arrays
    out, (h0, pre, h) = _forward_raw(params, X, station)
    mu = params.y_shift + params.y_scale * out[:, 0]
    s_abs = params.y_scale * np.abs(out[:, 1])
    sigma = np.maximum(s_abs, SIGMA_FLOOR)
    value = float(np.mean(crps_normal_clamped(mu, sigma, y)))
    g_mu, g_sigma = crps_normal_grad_clamped(mu, sigma, y)
    sign = np.where(out[:, 1] < 0, -1.0, 1.0)
    g_sigma = np.where(s_abs < SIGMA_FLOOR, 0.0, g_sigma)
    dout = np.empty((B, 2))
    dout[:, 0] = g_mu * params.y_scale / B
    dout[:, 1] = g_sigma * params.y_scale * sign / B
    grads = {"W2": h.T @ dout, "b2": dout.sum(axis=0)}
    dh = dout @ a["W2"].T
    if "W1" in a:
        dpre = dh * (pre > 0)
        grads["W1"] = h0.T @ dpre
        grads["b1"] = dpre.sum(axis=0)
        dh = dpre @ a["W1"].T
    if "emb" in a:
        n_in = X.shape[1]
        dE = np.zeros_like(a["emb"])
        np.add.at(dE, station, dh[:, n_in:])
        grads["emb"] = dE
    return value, grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.arrays.items()},
                   {k: np.zeros_like(v) for k, v in params.arrays.items()})


def adam_step(params: NetworkParams, grads: dict, state: AdamState, lr: float):
    """In-place Adam update with bias correction; returns (params, state)."""
    if set(grads) != set(params.arrays):
        raise ShapeMismatch("gradient keys do not match parameters")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.arrays.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"shape mismatch for {k}: {g.shape} vs {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class TrainLog:
    holdout_crps: list = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0


def train(cfg: NetworkConfig, X, station, y, n_stations: int, seed: Optional[int] = None):
    """One training run on standardized inputs; returns (params, TrainLog)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    station = np.asarray(station, dtype=np.int64)
    n = len(y)
    if n < 10 * cfg.batch_size:
        raise TooFewSamples(f"need >= {10 * cfg.batch_size} samples for batch size "
                            f"{cfg.batch_size}, got {n}")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_hold = max(1, int(round(cfg.early_stop_fraction * n)))
    hold, fit = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])

    params = init_params(X.shape[1], n_stations, cfg.hidden_nodes, cfg.n_emb, rng)
    params.y_shift = float(y[fit].mean())
    params.y_scale = float(max(y[fit].std(), 1e-6))
    state = AdamState.zeros_like(params)
    logbook = TrainLog()
    best = None
    best_score = math.inf
    since = 0
    for epoch in range(1, cfg.epochs + 1):
        order = fit[rng.permutation(len(fit))]
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            value, grads = backward(params, X[idx], station[idx], y[idx])
            if not math.isfinite(value):
                raise DivergedTraining(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            adam_step(params, grads, state, cfg.learning_rate)
        score = loss(params, X[hold], station[hold], y[hold])
        if not math.isfinite(score):
            raise DivergedTraining(f"non-finite holdout score at epoch {epoch}", epoch, None)
        logbook.holdout_crps.append(score)
        logbook.epochs_run = epoch
        if score < best_score:
            best_score = score
            best = params.copy()
            logbook.best_epoch = epoch
            since = 0
        else:
            since += 1
        if since >= cfg.patience:
            break
    return best, logbook


def train_ensemble(cfg: NetworkConfig, X, station, y, n_stations: int):
    """``run_count`` runs with seeds ``seed + i``."""
    runs, logs = [], []
    for i in range(cfg.run_count):
        p, lg = train(cfg, X, station, y, n_stations, seed=cfg.seed + i)
        runs.append(p)
        logs.append(lg)
    return runs, logs


def predict_ensemble(params_list, X, station=None):
    """Arithmetic average of the members' (mu, sigma)."""
    mus, sigmas = zip(*(forward(p, X, station) for p in params_list))
    return np.mean(mus, axis=0), np.mean(sigmas, axis=0)
