"""Uniform wrappers around every model family.

Each wrapper knows its input features, fits on a training dataset, scores a
dataset (per-sample CRPS) and converts itself to and from a plain payload
for the artifact file. Local models address stations by identifier, so a
dataset only needs to contain stations the model has seen.
"""

from __future__ import annotations

import time

import numpy as np

from . import boosting, emos, network, qrf
from .data import (
    ForecastDataset,
    StandardizationStats,
    apply_standardization,
    fit_standardization,
)
from .errors import FeatureMismatch, UnknownModel, UnknownStation
from .scoring import crps_normal, crps_quantile_approx

MODEL_NAMES = ("emos-gl", "emos-loc", "emos-loc-bst", "qrf", "fcn", "fcn-aux", "fcn-emb",
               "fcn-aux-emb", "nn-aux", "nn-aux-emb")

_NET_VARIANT = {
    "fcn": "FCN", "fcn-aux": "FCN-aux", "fcn-emb": "FCN-emb", "fcn-aux-emb": "FCN-aux-emb",
    "nn-aux": "NN-aux", "nn-aux-emb": "NN-aux-emb",
}

# desk-scale defaults; paper-scale values are reachable through the CLI flags
DEFAULTS = {
    "emos-gl": {},
    "emos-loc": {},
    "emos-loc-bst": {"max_iter": 1000, "step": 0.05, "stop": "AIC"},
    "qrf": {"n_trees": 200, "min_leaf_size": 10, "mtry": None, "seed": 0, "n_levels": 51},
    "fcn": {}, "fcn-aux": {}, "fcn-emb": {}, "fcn-aux-emb": {},
    "nn-aux": {"hidden_nodes": 32}, "nn-aux-emb": {"hidden_nodes": 32},
}
for _name in _NET_VARIANT:
    DEFAULTS[_name] = {"hidden_nodes": 0, "n_emb": 2, "epochs": 30, "learning_rate": 0.01,
                       "batch_size": 256, "run_count": 10, "seed": 0, "patience": 3,
                       "early_stop_fraction": 0.2, **DEFAULTS[_name]}


def station_index(model_ids, ds: ForecastDataset) -> np.ndarray:
    """Model-side station position for every sample of ``ds``."""
    pos = {sid: i for i, sid in enumerate(model_ids)}
    table = np.array([pos.get(sid, -1) for sid in ds.stations.ids], dtype=np.int64)
    idx = table[ds.station] if ds.n else np.zeros(0, dtype=np.int64)
    if np.any(idx < 0):
        missing = sorted({ds.stations.ids[s] for s in np.unique(ds.station[idx < 0])})
        raise UnknownStation(f"stations not seen during training: {missing[:5]}")
    return idx


def _check_features(names, ds):
    missing = [n for n in names if n not in ds.feature_spec.names]
    if missing:
        raise FeatureMismatch(f"dataset lacks model features {missing}")


class Model:
    name: str = ""
    kind: str = "gaussian"

    def __init__(self, **hyper):
        self.hyper = {**DEFAULTS.get(self.name, {}), **{k: v for k, v in hyper.items() if v is not None}}
        self.features: tuple = ()
        self.station_ids: tuple = ()
        self.metadata: dict = {}

    # subclasses implement _fit, predict, _payload, _load
    def fit(self, train: ForecastDataset):
        t0 = time.perf_counter()
        self.station_ids = train.stations.ids
        self._fit(train)
        self.metadata["fit_seconds"] = time.perf_counter() - t0
        self.metadata["train_range"] = [str(train.dates.min()), str(train.dates.max())]
        self.metadata["n_train"] = int(train.n)
        return self

    def crps(self, ds: ForecastDataset) -> np.ndarray:
        _check_features(self.features, ds)
        if self.kind == "gaussian":
            mu, sigma = self.predict(ds)
            return crps_normal(mu, sigma, ds.y)
        return crps_quantile_approx(self.predict(ds), ds.y)

    def payload(self) -> dict:
        return {"hyper": self.hyper, "features": list(self.features),
                "station_ids": list(self.station_ids), "metadata": self.metadata,
                "state": self._payload()}

    @classmethod
    def from_payload(cls, d) -> "Model":
        m = cls(**d["hyper"])
        m.features = tuple(d["features"])
        m.station_ids = tuple(d["station_ids"])
        m.metadata = d.get("metadata", {})
        m._load(d["state"])
        return m


class EmosModel(Model):
    scope = "global"

    def __init__(self, **hyper):
        super().__init__(**hyper)
        self.features = ("t2m_mean", "t2m_std")

    def _fit(self, train):
        self.coeffs = emos.fit_emos(train, self.scope)
        self.metadata["optimizer"] = {"method": "BFGS", "init": list(emos.IDENTITY),
                                      "gtol_sup_norm": emos.GTOL, "converged": self.coeffs.converged}

    def predict(self, ds):
        _check_features(self.features, ds)
        m, s = ds.column("t2m_mean"), ds.column("t2m_std")
        if self.scope == "global":
            return emos.predict_emos(self.coeffs.coef[None, :].repeat(ds.n, 0), m, s)
        rows = self.coeffs.coef[station_index(self.station_ids, ds)]
        return emos.predict_emos(rows, m, s)

    def _payload(self):
        return {"scope": self.scope, "coef": self.coeffs.coef, "converged": self.coeffs.converged,
                "fallback_stations": list(self.coeffs.fallback_stations)}

    def _load(self, st):
        self.coeffs = emos.EmosCoefficients(st["scope"], np.asarray(st["coef"], dtype=float),
                                            bool(st["converged"]), list(st["fallback_stations"]))


class EmosGlobal(EmosModel):
    name = "emos-gl"
    scope = "global"


class EmosLocal(EmosModel):
    name = "emos-loc"
    scope = "local"


class EmosBoost(Model):
    name = "emos-loc-bst"

    def _fit(self, train):
        self.stats = fit_standardization(train)
        z = apply_standardization(train, self.stats)
        self.booster = boosting.fit_emos_boost(z, self.hyper["max_iter"], self.hyper["step"],
                                               self.hyper["stop"])
        self.features = self.booster.features
        self.metadata["iterations_used"] = {self.station_ids[s]: c.iterations_used
                                            for s, c in self.booster.coeffs.items()}

    def predict(self, ds):
        _check_features(self.stats.names, ds)
        z = apply_standardization(_restrict(ds, self.stats.names), self.stats)
        Z = z.columns(self.features)
        idx = station_index(self.station_ids, ds)
        mu = np.empty(ds.n)
        sigma = np.empty(ds.n)
        for s in np.unique(idx):
            rows = np.flatnonzero(idx == s)
            c = self.booster.coeffs.get(int(s))
            if c is None:
                raise UnknownStation(f"no boosting fit for station {self.station_ids[s]}")
            mu[rows], sigma[rows] = boosting.predict_emos_boost(c, Z[rows])
        return mu, sigma

    def _payload(self):
        return {"stats": self.stats.to_dict(), "features": list(self.features),
                "coeffs": {str(s): {"beta": c.beta, "gamma": c.gamma,
                                    "iterations_used": c.iterations_used}
                           for s, c in self.booster.coeffs.items()}}

    def _load(self, st):
        self.stats = StandardizationStats.from_dict(st["stats"])
        feats = tuple(st["features"])
        coeffs = {int(s): boosting.BoostCoefficients(np.asarray(c["beta"], dtype=float),
                                                     np.asarray(c["gamma"], dtype=float),
                                                     int(c["iterations_used"]), feats)
                  for s, c in st["coeffs"].items()}
        self.booster = boosting.BoostModel(coeffs, feats, self.hyper["max_iter"],
                                           self.hyper["step"], self.hyper["stop"])


def _restrict(ds, names):
    """Dataset whose feature spec is exactly ``names`` (in that order)."""
    if ds.feature_spec.names == tuple(names):
        return ds
    from .data import FeatureSpec
    return ForecastDataset(ds.stations, ds.station, ds.dates, ds.columns(names), ds.y,
                           FeatureSpec(tuple(names)), ds.members)


class QrfModel(Model):
    name = "qrf"
    kind = "quantile"

    def _fit(self, train):
        h = self.hyper
        self.features = train.feature_spec.names
        self.forest = qrf.fit_qrf(train, h["n_trees"], h["min_leaf_size"], h["mtry"], h["seed"],
                                  levels=qrf.default_levels(h["n_levels"]))

    def predict(self, ds):
        _check_features(self.features, ds)
        return qrf.predict_quantiles_array(self.forest, ds.columns(self.features),
                                           station_index(self.station_ids, ds))

    def _payload(self):
        f = self.forest
        return {"n_trees": f.n_trees, "mtry": f.mtry, "min_leaf_size": f.min_leaf_size,
                "seed": f.seed, "p": f.p, "bootstrap": f.bootstrap, "max_depth": f.max_depth,
                "levels": f.levels,
                "forests": {str(s): sf.arrays() for s, sf in f.forests.items()}}

    def _load(self, st):
        forests = {int(s): qrf.StationForest(**{k: np.asarray(v) for k, v in arrs.items()})
                   for s, arrs in st["forests"].items()}
        self.forest = qrf.ForestModel(forests, int(st["n_trees"]), int(st["mtry"]),
                                      int(st["min_leaf_size"]), int(st["seed"]), int(st["p"]),
                                      bool(st["bootstrap"]), int(st["max_depth"]),
                                      np.asarray(st["levels"], dtype=float))


class NetworkModel(Model):
    variant = ""

    def config(self) -> network.NetworkConfig:
        h = self.hyper
        return network.NetworkConfig(
            variant=self.variant, hidden_nodes=h["hidden_nodes"], n_emb=h["n_emb"],
            epochs=h["epochs"], learning_rate=h["learning_rate"], batch_size=h["batch_size"],
            run_count=h["run_count"], seed=h["seed"], early_stop_fraction=h["early_stop_fraction"],
            patience=h["patience"])

    def _fit(self, train):
        cfg = self.config()
        self.features = train.feature_spec.names if cfg.aux else network.T2M_INPUTS
        sub = _restrict(train, self.features)
        self.stats = fit_standardization(sub)
        X = apply_standardization(sub, self.stats).X
        self.runs, logs = network.train_ensemble(cfg, X, train.station, train.y, len(train.stations))
        self.metadata["best_epochs"] = [lg.best_epoch for lg in logs]
        self.metadata["run_seeds"] = [cfg.seed + i for i in range(cfg.run_count)]
        self.metadata["n_parameters"] = network.count_parameters(
            len(self.features), len(train.stations), cfg.hidden_nodes, cfg.n_emb)

    def predict(self, ds):
        _check_features(self.features, ds)
        X = apply_standardization(_restrict(ds, self.features), self.stats).X
        station = station_index(self.station_ids, ds) if self.config().emb else None
        return network.predict_ensemble(self.runs, X, station)

    def _payload(self):
        return {"stats": self.stats.to_dict(),
                "runs": [{"arrays": r.arrays, "y_shift": r.y_shift, "y_scale": r.y_scale}
                         for r in self.runs]}

    def _load(self, st):
        self.stats = StandardizationStats.from_dict(st["stats"])
        self.runs = [network.NetworkParams({k: np.array(v, dtype=float) for k, v in r["arrays"].items()},
                                           float(r["y_shift"]), float(r["y_scale"]))
                     for r in st["runs"]]


def _net_class(cli_name, variant):
    return type(f"Net_{variant.replace('-', '_')}", (NetworkModel,), {"name": cli_name, "variant": variant})


REGISTRY = {"emos-gl": EmosGlobal, "emos-loc": EmosLocal, "emos-loc-bst": EmosBoost, "qrf": QrfModel}
for _cli, _variant in _NET_VARIANT.items():
    REGISTRY[_cli] = _net_class(_cli, _variant)


def make_model(name: str, **hyper) -> Model:
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}") from None
    return cls(**hyper)
