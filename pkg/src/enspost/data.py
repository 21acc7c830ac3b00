"""Dataset schema, CSV ingestion, standardization and synthetic archives.

A :class:`ForecastDataset` is column oriented: one predictor matrix ``X`` of
shape (n, p), one observation vector ``y`` and per-sample station indices and
calendar dates. Station metadata lives in a separate :class:`StationTable`.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    FeatureMismatch,
    InvalidConfig,
    IoError,
    MissingColumn,
    OverlappingRanges,
    ParseError,
)

log = logging.getLogger(__name__)

ENSEMBLE_VARIABLES = (
    "t2m", "cape", "sp", "tcc", "sshf", "slhf", "u10", "v10", "d2m", "ssr",
    "str", "sm", "v_pl500", "u_pl500", "u_pl850", "v_pl850", "gh_pl500",
    "q_pl850",
)
STATION_FEATURES = ("station_alt", "orog", "station_lat", "station_lon")
KEY_COLUMNS = ("station_id", "valid_time", "obs")
MEMBER_PREFIX = "t2m_ens_"


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureSpec:
    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        if len(names) == 0:
            raise InvalidConfig("feature spec must name at least one predictor")
        if len(set(names)) != len(names):
            raise InvalidConfig("feature names must be unique")
        object.__setattr__(self, "names", names)

    @property
    def p(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise FeatureMismatch(f"feature {name!r} not in spec") from None

    def indices(self, names: Sequence[str]) -> list:
        return [self.index(n) for n in names]

    @classmethod
    def full(cls) -> "FeatureSpec":
        names = [f"{v}_{s}" for v in ENSEMBLE_VARIABLES for s in ("mean", "std")]
        return cls(tuple(names) + STATION_FEATURES)

    @classmethod
    def t2m_only(cls) -> "FeatureSpec":
        return cls(("t2m_mean", "t2m_std"))

    def without_station_features(self) -> "FeatureSpec":
        return FeatureSpec(tuple(n for n in self.names if n not in STATION_FEATURES))


@dataclass(frozen=True)
class StationTable:
    ids: tuple
    lat: np.ndarray
    lon: np.ndarray
    alt: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        for name in ("lat", "lon", "alt"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=float)))
        if len(set(self.ids)) != len(self.ids):
            raise InvalidConfig("duplicate station ids")

    def __len__(self):
        return len(self.ids)

    def position(self, station_id) -> int:
        return self.ids.index(str(station_id))


@dataclass(frozen=True)
class ForecastDataset:
    """Aligned (station, day) samples.

    ``station`` holds integer positions into ``stations``; ``members`` is the
    optional raw t2m ensemble, shape (n, m).
    """

    stations: StationTable
    station: np.ndarray
    dates: np.ndarray
    X: np.ndarray
    y: np.ndarray
    feature_spec: FeatureSpec
    members: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "station", _frozen(np.asarray(self.station, dtype=np.int64)))
        object.__setattr__(self, "dates", _frozen(np.asarray(self.dates, dtype="datetime64[D]")))
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            X = X.reshape(len(self.y), -1)
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(np.asarray(self.y, dtype=float)))
        if self.members is not None:
            object.__setattr__(self, "members", _frozen(np.asarray(self.members, dtype=float)))
        n = len(self.y)
        if not (len(self.station) == len(self.dates) == X.shape[0] == n):
            raise InvalidConfig("dataset columns have inconsistent lengths")
        if X.shape[1] != self.feature_spec.p:
            raise FeatureMismatch(f"X has {X.shape[1]} columns, spec has {self.feature_spec.p}")
        if n and (self.station.min() < 0 or self.station.max() >= len(self.stations)):
            raise InvalidConfig("sample references an unknown station")
        if not np.all(np.isfinite(self.y)):
            raise InvalidConfig("observations must be finite")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def station_ids(self) -> np.ndarray:
        return np.asarray(self.stations.ids, dtype=object)[self.station]

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.feature_spec.index(name)]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        return self.X[:, self.feature_spec.indices(names)]

    def subset(self, mask) -> "ForecastDataset":
        mask = np.asarray(mask)
        return ForecastDataset(
            stations=self.stations,
            station=self.station[mask],
            dates=self.dates[mask],
            X=self.X[mask],
            y=self.y[mask],
            feature_spec=self.feature_spec,
            members=None if self.members is None else self.members[mask],
        )

    def with_X(self, X) -> "ForecastDataset":
        return ForecastDataset(self.stations, self.station, self.dates, X, self.y,
                               self.feature_spec, self.members)

    def station_rows(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.station == s)

    def same_grid(self, other: "ForecastDataset") -> bool:
        return (self.stations.ids == other.stations.ids
                and np.array_equal(self.station, other.station)
                and np.array_equal(self.dates, other.dates))


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def csv_header(feature_spec: FeatureSpec, n_members: int = 0) -> list:
    head = list(KEY_COLUMNS) + list(STATION_FEATURES)
    head += [n for n in feature_spec.names if n not in STATION_FEATURES]
    head += [f"{MEMBER_PREFIX}{i + 1}" for i in range(n_members)]
    return head


def load_csv(path, feature_spec: Optional[FeatureSpec] = None) -> ForecastDataset:
    """Read a station/day archive.

    Rows with a missing observation or missing predictor are dropped; the
    number dropped is logged and stored on the returned object as
    ``dropped``.
    """
    feature_spec = feature_spec or FeatureSpec.full()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyDataset(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        col = {name: i for i, name in enumerate(header)}
        needed = list(KEY_COLUMNS) + list(feature_spec.names)
        for name in needed:
            if name not in col:
                raise MissingColumn(f"{path}: missing column {name!r}")
        member_cols = sorted(
            (c for c in header if c.startswith(MEMBER_PREFIX)),
            key=lambda c: int(c[len(MEMBER_PREFIX):]),
        )
        feat_idx = [col[n] for n in feature_spec.names]
        mem_idx = [col[c] for c in member_cols]

        def num(cell, r, name):
            cell = cell.strip()
            if cell == "" or cell.lower() in ("na", "nan"):
                return math.nan
            try:
                return float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r}, column {name!r}: not a number: {cell!r}",
                                 row=r, column=name) from None

        station_order: list = []
        station_pos: dict = {}
        station_meta: dict = {}
        st, dates, X, y, M = [], [], [], [], []
        dropped = 0
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}", row=r)
            sid = row[col["station_id"]].strip()
            try:
                day = np.datetime64(dt.date.fromisoformat(row[col["valid_time"]].strip()), "D")
            except ValueError:
                raise ParseError(f"{path}: row {r}, column 'valid_time': bad date", row=r,
                                 column="valid_time") from None
            obs = num(row[col["obs"]], r, "obs")
            feats = [num(row[i], r, header[i]) for i in feat_idx]
            mems = [num(row[i], r, header[i]) for i in mem_idx]
            if math.isnan(obs) or any(math.isnan(v) for v in feats) or any(math.isnan(v) for v in mems):
                dropped += 1
                continue
            if sid not in station_pos:
                station_pos[sid] = len(station_order)
                station_order.append(sid)
                meta = []
                for name in ("station_lat", "station_lon", "station_alt"):
                    meta.append(num(row[col[name]], r, name) if name in col else math.nan)
                station_meta[sid] = meta
            st.append(station_pos[sid])
            dates.append(day)
            X.append(feats)
            y.append(obs)
            M.append(mems)
    if not y:
        raise EmptyDataset(f"{path}: no valid rows")
    if dropped:
        log.info("%s: dropped %d rows with missing values", path, dropped)
    meta = np.array([station_meta[s] for s in station_order], dtype=float)
    ds = ForecastDataset(
        stations=StationTable(tuple(station_order), meta[:, 0], meta[:, 1], meta[:, 2]),
        station=np.array(st),
        dates=np.array(dates, dtype="datetime64[D]"),
        X=np.array(X, dtype=float).reshape(len(y), feature_spec.p),
        y=np.array(y, dtype=float),
        feature_spec=feature_spec,
        members=np.array(M, dtype=float) if mem_idx else None,
    )
    object.__setattr__(ds, "dropped", dropped)
    return ds


def write_csv(ds: ForecastDataset, path) -> None:
    """Write ``ds`` atomically; floats use ``repr`` so re-reading is exact."""
    n_members = 0 if ds.members is None else ds.members.shape[1]
    header = csv_header(ds.feature_spec, n_members)
    names = ds.feature_spec.names
    sf = {n: ds.feature_spec.names.index(n) for n in STATION_FEATURES if n in names}
    aux = [names.index(h) for h in header[len(KEY_COLUMNS) + len(STATION_FEATURES):]
           if h in names]
    sts = ds.stations
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(ds.n):
                s = ds.station[i]
                row = [sts.ids[s], str(ds.dates[i]), repr(float(ds.y[i]))]
                fallback = {"station_alt": sts.alt[s], "orog": math.nan,
                            "station_lat": sts.lat[s], "station_lon": sts.lon[s]}
                for name in STATION_FEATURES:
                    v = ds.X[i, sf[name]] if name in sf else fallback[name]
                    row.append(repr(float(v)))
                row += [repr(float(ds.X[i, j])) for j in aux]
                if n_members:
                    row += [repr(float(v)) for v in ds.members[i]]
                w.writerow(row)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------

def _as_day(d):
    return np.datetime64(d, "D")


def split_by_period(ds: ForecastDataset, train_range, valid_range):
    """Split on inclusive (start, end) date ranges; rows outside both are dropped."""
    t0, t1 = map(_as_day, train_range)
    v0, v1 = map(_as_day, valid_range)
    if t0 > t1 or v0 > v1:
        raise InvalidConfig("date range start after end")
    if t0 <= v1 and v0 <= t1:
        raise OverlappingRanges(f"ranges {train_range} and {valid_range} overlap")
    tr = (ds.dates >= t0) & (ds.dates <= t1)
    va = (ds.dates >= v0) & (ds.dates <= v1)
    return ds.subset(tr), ds.subset(va)


# --------------------------------------------------------------------------
# Standardization
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StandardizationStats:
    names: tuple
    mean: np.ndarray
    std: np.ndarray
    exempt: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "mean", _frozen(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "std", _frozen(np.asarray(self.std, dtype=float)))
        object.__setattr__(self, "exempt", tuple(int(i) for i in self.exempt))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(),
                "std": self.std.tolist(), "exempt": list(self.exempt)}

    @classmethod
    def from_dict(cls, d) -> "StandardizationStats":
        return cls(tuple(d["names"]), np.array(d["mean"], dtype=float),
                   np.array(d["std"], dtype=float), tuple(d.get("exempt", ())))


def fit_standardization(ds: ForecastDataset, exempt: Sequence[int] = ()) -> StandardizationStats:
    """Population (divisor N) mean and sd per column; constants get divisor 1."""
    if ds.n == 0:
        raise EmptyDataset("cannot standardize an empty dataset")
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    mean = mean.copy()
    for j in exempt:
        mean[j] = 0.0
        std[j] = 1.0
    return StandardizationStats(ds.feature_spec.names, mean, std, tuple(exempt))


def _check_stats(ds, stats):
    if tuple(stats.names) != ds.feature_spec.names:
        raise FeatureMismatch("standardization stats were fitted on a different feature spec")


def apply_standardization(ds: ForecastDataset, stats: StandardizationStats) -> ForecastDataset:
    _check_stats(ds, stats)
    return ds.with_X((ds.X - stats.mean) / stats.std)


def invert_standardization(ds: ForecastDataset, stats: StandardizationStats) -> ForecastDataset:
    _check_stats(ds, stats)
    return ds.with_X(ds.X * stats.std + stats.mean)


# --------------------------------------------------------------------------
# Synthetic archive
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the synthetic archive; temperatures in degrees Celsius."""

    S: int = 60
    T: int = 730
    seed: int = 0
    bias_amplitude: float = 1.0
    nonlinearity_amplitude: float = 1.5
    station_bias_scale: float = 1.5
    underdispersion_factor: float = 0.5
    noise_scale: float = 1.5
    member_count: int = 10
    start: str = "2015-01-01"

    def validate(self):
        if self.S < 1 or self.T < 1 or self.member_count < 1:
            raise InvalidConfig("S, T and member_count must be >= 1")
        for name in ("bias_amplitude", "nonlinearity_amplitude", "station_bias_scale", "noise_scale"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise InvalidConfig(f"{name} must be a finite value >= 0")
        if not (0 < self.underdispersion_factor <= 1):
            raise InvalidConfig("underdispersion_factor must lie in (0, 1]")
        try:
            dt.date.fromisoformat(self.start)
        except ValueError:
            raise InvalidConfig(f"bad start date {self.start!r}") from None


# physical offset/scale applied to each auxiliary variable's unit-scale signal
_AUX_UNITS = {
    "cape": (150.0, 120.0), "sp": (97000.0, 900.0), "tcc": (0.6, 0.25),
    "sshf": (-2e5, 3e5), "slhf": (-8e5, 6e5), "u10": (1.5, 3.0), "v10": (0.5, 3.0),
    "d2m": (276.0, 5.0), "ssr": (8e6, 6e6), "str": (-4e6, 1.5e6), "sm": (0.3, 0.08),
    "v_pl500": (0.0, 10.0), "u_pl500": (12.0, 10.0), "u_pl850": (6.0, 7.0),
    "v_pl850": (0.5, 7.0), "gh_pl500": (55000.0, 1500.0), "q_pl850": (0.005, 0.002),
}
_N_LATENT = 4


def generate_synthetic(cfg: SyntheticConfig) -> ForecastDataset:
    """Synthetic station archive with a known ensemble error structure.

    Recipe (all draws from one seeded generator, in this order):

    1. Stations: latitude, longitude, altitude; model orography is the
       altitude plus a grid-representation error. A latent station bias
       mixes a random part with the (standardized) altitude mismatch, scaled
       by ``station_bias_scale``.
    2. Weather: ``_N_LATENT`` regional AR(1) factors mixed with local noise.
       The true temperature is a seasonal cycle, an altitude lapse term and
       an anomaly driven by the factors.
    3. Auxiliary ensemble means are noisy linear mixtures of the factors (so
       they carry real signal), reported in physical-looking units.
    4. Forecast error: ``bias_amplitude`` times a linear function of two
       auxiliary means, plus ``nonlinearity_amplitude`` times a
       station-altitude x quadratic(auxiliary) interaction, plus the
       station bias. Weather-dependent noise sd ``noise_scale * exp(0.3 z)``,
       with ``z`` an independent field reported as the q_pl850 mean,
       drives both the members (times ``underdispersion_factor``) and the
       observation, so factor 1 and zero amplitudes give an exchangeable,
       perfectly calibrated ensemble.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    S, T, m = cfg.S, cfg.T, cfg.member_count

    lat = rng.uniform(47.5, 55.0, S)
    lon = rng.uniform(6.0, 15.0, S)
    alt = np.minimum(rng.gamma(1.6, 180.0, S), 2500.0)
    orog = np.maximum(alt + rng.normal(0.0, 120.0, S), 0.0)
    mismatch = alt - orog
    mismatch_z = mismatch / (mismatch.std() + 1e-9) if S > 1 else np.zeros(S)
    station_bias = cfg.station_bias_scale * (0.6 * rng.normal(size=S) + 0.8 * mismatch_z)
    alt_z = (alt - alt.mean()) / (alt.std() + 1e-9) if S > 1 else np.zeros(S)
    interaction = np.tanh(alt_z) + 0.5

    # regional factors (T, K) and local mixture (S, T, K)
    phi = 0.7
    F = np.empty((T, _N_LATENT))
    F[0] = rng.normal(size=_N_LATENT)
    eps = rng.normal(size=(T, _N_LATENT))
    for t in range(1, T):
        F[t] = phi * F[t - 1] + math.sqrt(1 - phi * phi) * eps[t]
    G = 0.6 * F[None, :, :] + 0.8 * rng.normal(size=(S, T, _N_LATENT))

    start = np.datetime64(cfg.start, "D")
    days = start + np.arange(T)
    doy = (days - days.astype("datetime64[Y]")).astype(int) + 1
    season = 8.0 * np.sin(2 * np.pi * (doy - 105) / 365.25)
    clim = 9.0 - 0.0065 * alt[:, None] - 0.4 * (lat[:, None] - 51.0) + season[None, :]
    truth = clim + 3.0 * G[..., 0] + 1.5 * G[..., 1]

    aux_names = ENSEMBLE_VARIABLES[1:]
    loadings = rng.normal(size=(len(aux_names), _N_LATENT))
    loadings /= np.linalg.norm(loadings, axis=1, keepdims=True)
    aux_z = np.einsum("stk,vk->vst", G, loadings) + 0.3 * rng.normal(size=(len(aux_names), S, T))
    aux_z /= np.maximum(aux_z.std(axis=(1, 2), keepdims=True), 1e-9)
    aux_sd_z = np.abs(rng.normal(0.6, 0.25, size=(len(aux_names), S, T)))
    # the spread driver is independent of the factors, so spread says nothing about the bias
    aux_z[aux_names.index("q_pl850")] = rng.normal(size=(S, T))

    iv = {name: i for i, name in enumerate(aux_names)}
    f_linear = 0.8 * aux_z[iv["ssr"]] - 0.6 * aux_z[iv["tcc"]]
    f_nonlin = interaction[:, None] * (aux_z[iv["sshf"]] ** 2 - 1.0) / math.sqrt(2.0)
    sigma = cfg.noise_scale * np.exp(0.3 * aux_z[iv["q_pl850"]])

    center = (truth + cfg.bias_amplitude * f_linear + cfg.nonlinearity_amplitude * f_nonlin
              + station_bias[:, None])
    members = center[..., None] + cfg.underdispersion_factor * sigma[..., None] * rng.normal(size=(S, T, m))
    obs = truth + sigma * rng.normal(size=(S, T))

    ens_mean = members.mean(axis=-1)
    ens_sd = members.std(axis=-1)
    spec = FeatureSpec.full()
    cols = {"t2m_mean": ens_mean, "t2m_std": ens_sd}
    for name in aux_names:
        off, scale = _AUX_UNITS[name]
        cols[f"{name}_mean"] = off + scale * aux_z[iv[name]]
        cols[f"{name}_std"] = abs(scale) * aux_sd_z[iv[name]]
    cols["station_alt"] = np.broadcast_to(alt[:, None], (S, T))
    cols["orog"] = np.broadcast_to(orog[:, None], (S, T))
    cols["station_lat"] = np.broadcast_to(lat[:, None], (S, T))
    cols["station_lon"] = np.broadcast_to(lon[:, None], (S, T))
    X = np.stack([cols[n].reshape(-1) for n in spec.names], axis=1)

    ids = tuple(f"S{s + 1:04d}" for s in range(S))
    return ForecastDataset(
        stations=StationTable(ids, lat, lon, alt),
        station=np.repeat(np.arange(S), T),
        dates=np.tile(days, S),
        X=X,
        y=obs.reshape(-1),
        feature_spec=spec,
        members=members.reshape(S * T, m),
    )
