"""Evaluation reports and the end-to-end synthetic benchmark."""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import ForecastDataset, SyntheticConfig, generate_synthetic, split_by_period
from .errors import InvalidConfig
from .importance import ImportanceReport, PermutationPlan, permutation_importance
from .models import MODEL_NAMES, Model, make_model
from .scoring import crps_ensemble, crps_normal, crpss
from .verification import (
    DM_LAG,
    PIT_BINS,
    mean_crps_by_station,
    pairwise_significance_matrix,
    pit_histogram,
    rank_histogram,
    spread_error_ratio,
)

log = logging.getLogger(__name__)

RAW = "raw"


@dataclass
class EvaluationReport:
    names: list                        # raw first (when present), then models in input order
    station_ids: tuple
    overall: dict                      # name -> mean CRPS over all samples
    station_means: dict                # name -> (S,) per-station mean CRPS
    crpss: dict                        # reference -> {name -> (S,) skill}
    best_counts: dict                  # name -> number of stations where it is best
    histograms: dict                   # name -> HistogramResult
    spread_error: dict                 # name -> ratio
    significance: Optional[np.ndarray]  # over the post-processing models only
    significance_names: list
    alpha: float
    runtime: dict                      # name -> {"fit": s, "predict": s}
    importance: dict = field(default_factory=dict)   # name -> ImportanceReport

    def best_overall(self, include_raw: bool = False) -> str:
        cands = [n for n in self.names if include_raw or n != RAW]
        return min(cands, key=lambda n: self.overall[n])


def _spread_and_mean(model: Model, ds):
    if model.kind == "gaussian":
        mu, sigma = model.predict(ds)
        return sigma, mu, ("gaussian", mu, sigma)
    q = model.predict(ds)
    return q.std(axis=1), q.mean(axis=1), ("sample", q)


def evaluate(models: Sequence[Model], valid: ForecastDataset, references: Sequence[str] = (RAW,),
             alpha: float = 0.05, k: int = DM_LAG, pit_bins: int = PIT_BINS, seed: int = 0,
             importance: bool = False, importance_seed: int = 0) -> EvaluationReport:
    """Score every model on ``valid`` and assemble the report tables."""
    if not models:
        raise InvalidConfig("need at least one model to evaluate")
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise InvalidConfig(f"duplicate model names {names}")
    scores, hists, ser, runtime = {}, {}, {}, {}
    has_raw = valid.members is not None
    if has_raw:
        scores[RAW] = crps_ensemble(valid.members, valid.y)
        hists[RAW] = rank_histogram(valid.members, valid.y, seed)
        ser[RAW] = spread_error_ratio(valid.members.std(axis=1), valid.members.mean(axis=1), valid.y)
    for m in models:
        t0 = time.perf_counter()
        spread, mean, pred = _spread_and_mean(m, valid)
        runtime[m.name] = {"fit": float(m.metadata.get("fit_seconds", float("nan"))),
                           "predict": time.perf_counter() - t0}
        if pred[0] == "gaussian":
            scores[m.name] = crps_normal(pred[1], pred[2], valid.y)
            hists[m.name] = pit_histogram(pred[1], valid.y, pit_bins, sigma=pred[2])
        else:
            scores[m.name] = crps_ensemble(pred[1], valid.y)
            hists[m.name] = rank_histogram(pred[1], valid.y, seed)
        ser[m.name] = spread_error_ratio(spread, mean, valid.y)

    all_names = ([RAW] if has_raw else []) + names
    overall, station_means = {}, {}
    for n in all_names:
        sm = mean_crps_by_station(scores[n], valid.station)
        overall[n] = sm.overall
        station_means[n] = sm.means
    station_ids = tuple(valid.stations.ids[i] for i in np.unique(valid.station))

    skill = {}
    for ref in references:
        if ref not in station_means:
            raise InvalidConfig(f"unknown reference {ref!r}; choose from {all_names}")
        skill[ref] = {n: crpss(station_means[n], station_means[ref]) for n in all_names}

    table = np.stack([station_means[n] for n in names])
    best = np.argmin(table, axis=0)
    best_counts = {n: int(np.sum(best == i)) for i, n in enumerate(names)}

    sig = None
    if len(names) > 1:
        sig = pairwise_significance_matrix([scores[n] for n in names], valid.station, alpha, k,
                                           dates=valid.dates)
    imp = {}
    if importance:
        plan = PermutationPlan.from_seed(valid.n, importance_seed)
        for m in models:
            imp[m.name] = permutation_importance(m, valid, plan)
    return EvaluationReport(all_names, station_ids, overall, station_means, skill, best_counts,
                            hists, ser, sig, names, alpha, runtime, imp)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.4f}"
    return str(v)


def format_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Right-aligned plain text table."""
    cells = [list(map(str, header))] + [[_fmt(v) for v in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(out_dir, stem: str, header, rows) -> str:
    """Write ``stem.txt`` (aligned) and ``stem.csv``; returns the text form."""
    text = format_table(header, rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    _atomic_write(os.path.join(out_dir, stem + ".txt"), text)
    _atomic_write(os.path.join(out_dir, stem + ".csv"), buf.getvalue())
    return text


def report_tables(rep: EvaluationReport) -> dict:
    """stem -> (header, rows) for every table of the report."""
    t = {}
    ref = RAW if RAW in rep.overall else None
    t["overall_crps"] = (["model", "mean_crps", "crpss_vs_raw"],
                         [[n, rep.overall[n], crpss(rep.overall[n], rep.overall[ref]) if ref else float("nan")]
                          for n in rep.names])
    t["station_crps"] = (["station"] + rep.names,
                         [[sid] + [rep.station_means[n][i] for n in rep.names]
                          for i, sid in enumerate(rep.station_ids)])
    for r, by_model in rep.crpss.items():
        t[f"crpss_vs_{r}"] = (["station"] + rep.names,
                              [[sid] + [by_model[n][i] for n in rep.names]
                               for i, sid in enumerate(rep.station_ids)])
    t["best_model"] = (["model", "stations_best"],
                       [[n, c] for n, c in rep.best_counts.items()])
    hist_rows = []
    for n, h in rep.histograms.items():
        for b, c in enumerate(h.counts):
            hist_rows.append([n, h.kind, b + 1, int(c), c / h.n])
    t["histograms"] = (["model", "kind", "bin", "count", "frequency"], hist_rows)
    t["calibration"] = (["model", "kind", "bins", "chi_square", "spread_error_ratio"],
                        [[n, rep.histograms[n].kind, rep.histograms[n].K, rep.histograms[n].chi2,
                          rep.spread_error[n]] for n in rep.names])
    if rep.significance is not None:
        t["significance"] = (["better \\ worse"] + rep.significance_names,
                             [[n] + list(rep.significance[i])
                              for i, n in enumerate(rep.significance_names)])
    t["runtime"] = (["model", "fit_seconds", "predict_seconds"],
                    [[n, v["fit"], v["predict"]] for n, v in rep.runtime.items()])
    for n, imp in rep.importance.items():
        t[f"importance_{n}"] = (["feature", "importance"], [[f, v] for f, v in imp.ranked()])
    return t


def write_report(rep: EvaluationReport, out_dir) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    tables = report_tables(rep)
    for stem, (header, rows) in tables.items():
        write_table(out_dir, stem, header, rows)
    return tables


def importance_table(imp: ImportanceReport):
    return ["feature", "importance"], [[f, v] for f, v in imp.ranked()]


# --------------------------------------------------------------------------
# Synthetic benchmark
# --------------------------------------------------------------------------

BENCH_TRAIN = ("2015-01-01", "2016-12-31")
BENCH_VALID = ("2017-01-01", "2017-12-31")


@dataclass
class BenchmarkResult:
    seed: int
    report: EvaluationReport
    seconds: float
    models: dict = field(default_factory=dict)     # name -> fitted Model
    valid: Optional[ForecastDataset] = None


def benchmark_data(seed: int, S: int = 60, **overrides):
    """Default synthetic benchmark: two training years and one validation year."""
    ds = generate_synthetic(SyntheticConfig(S=S, T=1095, seed=seed, **overrides))
    return split_by_period(ds, BENCH_TRAIN, BENCH_VALID)


def run_benchmark(seed: int, names: Sequence[str] = MODEL_NAMES, S: int = 60,
                  hyper: Optional[dict] = None, **overrides) -> BenchmarkResult:
    """Fit every model on one synthetic draw and evaluate on the held-out year."""
    t0 = time.perf_counter()
    train, valid = benchmark_data(seed, S, **overrides)
    hyper = hyper or {}
    models = []
    for n in names:
        m = make_model(n, **hyper.get(n, {})).fit(train)
        log.info("seed %d: fitted %s in %.1f s", seed, n, m.metadata["fit_seconds"])
        models.append(m)
    rep = evaluate(models, valid)
    return BenchmarkResult(seed, rep, time.perf_counter() - t0, {m.name: m for m in models}, valid)
