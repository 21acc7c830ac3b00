"""Command line front end: ``enspost generate|train|predict|evaluate|importance``.

Exit status: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
import warnings

import numpy as np

from . import artifact
from .data import SyntheticConfig, generate_synthetic, load_csv, write_csv
from .errors import EmptyDataset, EnspostError, InvalidAlpha, InvalidConfig, UnknownModel, UsageError
from .experiment import RAW, evaluate, format_table, importance_table, write_report, write_table
from .importance import PermutationPlan, permutation_importance
from .models import DEFAULTS, MODEL_NAMES, make_model

log = logging.getLogger("enspost")

# flag dest -> model hyperparameter key
_HYPER_FLAGS = {
    "runs": "run_count", "epochs": "epochs", "hidden": "hidden_nodes", "emb_dim": "n_emb",
    "lr": "learning_rate", "batch_size": "batch_size", "patience": "patience",
    "holdout": "early_stop_fraction", "seed": "seed", "trees": "n_trees",
    "min_leaf": "min_leaf_size", "mtry": "mtry", "levels": "n_levels", "max_iter": "max_iter",
    "step": "step", "stop": "stop",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _date_range(ds, rng):
    if not rng:
        return ds
    lo, hi = (np.datetime64(r, "D") for r in rng)
    if hi < lo:
        raise InvalidConfig(f"empty date range {rng[0]}..{rng[1]}")
    return ds.subset((ds.dates >= lo) & (ds.dates <= hi))


def _load(path, rng=None):
    ds = _date_range(load_csv(path), rng)
    if ds.n == 0:
        raise EmptyDataset(f"no samples in {path} for range {rng}")
    return ds


def _print_config(settings: dict) -> int:
    print(json.dumps(settings, indent=2, sort_keys=True, default=str))
    return 0


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_generate(a) -> int:
    cfg = SyntheticConfig(S=a.stations, T=a.days, seed=a.seed, bias_amplitude=a.bias_amplitude,
                          nonlinearity_amplitude=a.nonlinearity, station_bias_scale=a.station_bias_scale,
                          underdispersion_factor=a.underdispersion, noise_scale=a.noise_scale,
                          member_count=a.members, start=a.start)
    cfg.validate()
    settings = {"command": "generate", "out": a.out, **cfg.__dict__}
    if a.print_config:
        return _print_config(settings)
    ds = generate_synthetic(cfg)
    write_csv(ds, a.out)
    print(f"wrote {ds.n} rows to {a.out} (seed {cfg.seed}; config {json.dumps(cfg.__dict__)})")
    return 0


def _hyper_from_args(a) -> dict:
    allowed = DEFAULTS[a.model]
    out = {}
    for dest, key in _HYPER_FLAGS.items():
        v = getattr(a, dest, None)
        if v is None:
            continue
        if key not in allowed:
            log.warning("--%s does not apply to %s; ignored", dest.replace("_", "-"), a.model)
            continue
        out[key] = v
    return out


def cmd_train(a) -> int:
    if a.model not in MODEL_NAMES:
        raise UnknownModel(f"unknown model {a.model!r}; choose from {', '.join(MODEL_NAMES)}")
    model = make_model(a.model, **_hyper_from_args(a))
    settings = {"command": "train", "model": a.model, "data": a.data, "range": a.range,
                "out": a.out, "hyperparameters": model.hyper}
    if a.print_config:
        return _print_config(settings)
    train = _load(a.data, a.range)
    t0 = time.perf_counter()
    model.fit(train)
    elapsed = time.perf_counter() - t0
    artifact.save(model, a.out)
    print(f"trained {a.model} on {train.n} samples in {elapsed:.1f} s -> {a.out}")
    return 0


def cmd_predict(a) -> int:
    settings = {"command": "predict", "model_file": a.model_file, "data": a.data,
                "range": a.range, "out": a.out}
    if a.print_config:
        return _print_config(settings)
    model = artifact.load(a.model_file)
    ds = _load(a.data, a.range)
    pred = model.predict(ds)
    keys = [[ds.stations.ids[s], str(d), float(y)] for s, d, y in zip(ds.station, ds.dates, ds.y)]
    if model.kind == "gaussian":
        header = ["station_id", "valid_time", "obs", "mu", "sigma"]
        rows = [k + [float(m), float(s)] for k, m, s in zip(keys, *pred)]
    else:
        levels = model.forest.levels
        header = ["station_id", "valid_time", "obs"] + [f"q{lv:.6f}" for lv in levels]
        rows = [k + [float(v) for v in q] for k, q in zip(keys, pred)]
    out_dir, stem = os.path.split(os.path.abspath(a.out))
    stem = stem[:-4] if stem.endswith(".csv") else stem
    write_table(out_dir, stem, header, rows)
    print(f"wrote {len(rows)} predictions to {os.path.join(out_dir, stem)}.csv")
    return 0


def cmd_evaluate(a) -> int:
    settings = {"command": "evaluate", "artifacts": a.artifacts, "data": a.data, "range": a.range,
                "references": a.reference, "alpha": a.alpha, "lag": a.lag, "pit_bins": a.pit_bins,
                "seed": a.seed, "importance": a.importance, "importance_seed": a.importance_seed,
                "out_dir": a.out_dir}
    if a.print_config:
        return _print_config(settings)
    if not 0 < a.alpha < 1:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {a.alpha}")
    valid = _load(a.data, a.range)
    models = [artifact.load(p) for p in a.artifacts]
    refs = a.reference or ([RAW] if valid.members is not None else [models[0].name])
    rep = evaluate(models, valid, refs, a.alpha, a.lag, a.pit_bins, a.seed,
                   a.importance, a.importance_seed)
    tables = write_report(rep, a.out_dir)
    header, rows = tables["overall_crps"]
    print(format_table(header, rows), end="")
    print(f"best model: {rep.best_overall()}; report written to {a.out_dir}")
    return 0


def cmd_importance(a) -> int:
    settings = {"command": "importance", "model_file": a.model_file, "data": a.data,
                "range": a.range, "seed": a.seed, "out_dir": a.out_dir}
    if a.print_config:
        return _print_config(settings)
    model = artifact.load(a.model_file)
    valid = _load(a.data, a.range)
    rep = permutation_importance(model, valid, PermutationPlan.from_seed(valid.n, a.seed))
    os.makedirs(a.out_dir, exist_ok=True)
    header, rows = importance_table(rep)
    print(write_table(a.out_dir, f"importance_{model.name}", header, rows), end="")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="enspost", description="Ensemble forecast post-processing.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--print-config", action="store_true",
                        help="print the resolved settings as JSON and exit")
        return sp

    g = common(sub.add_parser("generate", help="write a synthetic archive"))
    d = SyntheticConfig()
    g.add_argument("--out", required=True)
    g.add_argument("--stations", type=int, default=d.S)
    g.add_argument("--days", type=int, default=d.T)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--members", type=int, default=d.member_count)
    g.add_argument("--bias-amplitude", type=float, default=d.bias_amplitude)
    g.add_argument("--nonlinearity", type=float, default=d.nonlinearity_amplitude)
    g.add_argument("--station-bias-scale", type=float, default=d.station_bias_scale)
    g.add_argument("--underdispersion", type=float, default=d.underdispersion_factor)
    g.add_argument("--noise-scale", type=float, default=d.noise_scale)
    g.add_argument("--start", default=d.start)
    g.set_defaults(func=cmd_generate)

    t = common(sub.add_parser("train", help="fit a model and write its artifact"))
    t.add_argument("--model", required=True, help=", ".join(MODEL_NAMES))
    t.add_argument("--data", required=True)
    t.add_argument("--range", nargs=2, metavar=("START", "END"), help="inclusive date range")
    t.add_argument("--out", required=True)
    h = t.add_argument_group("hyperparameters (defaults depend on --model)")
    h.add_argument("--seed", type=int)
    h.add_argument("--runs", type=int)
    h.add_argument("--epochs", type=int)
    h.add_argument("--hidden", type=int)
    h.add_argument("--emb-dim", type=int)
    h.add_argument("--lr", type=float)
    h.add_argument("--batch-size", type=int)
    h.add_argument("--patience", type=int)
    h.add_argument("--holdout", type=float)
    h.add_argument("--trees", type=int)
    h.add_argument("--min-leaf", type=int)
    h.add_argument("--mtry", type=int)
    h.add_argument("--levels", type=int)
    h.add_argument("--max-iter", type=int)
    h.add_argument("--step", type=float)
    h.add_argument("--stop", choices=("AIC", "max_iter"))
    t.set_defaults(func=cmd_train)

    pr = common(sub.add_parser("predict", help="write predictive distributions"))
    pr.add_argument("--model-file", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--range", nargs=2, metavar=("START", "END"))
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = common(sub.add_parser("evaluate", help="score artifacts on a validation set"))
    e.add_argument("artifacts", nargs="+")
    e.add_argument("--data", required=True)
    e.add_argument("--range", nargs=2, metavar=("START", "END"))
    e.add_argument("--reference", action="append",
                   help="CRPSS reference (model name or 'raw'); repeatable")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--lag", type=int, default=2)
    e.add_argument("--pit-bins", type=int, default=20)
    e.add_argument("--seed", type=int, default=0, help="rank histogram tie-breaking seed")
    e.add_argument("--importance", action="store_true")
    e.add_argument("--importance-seed", type=int, default=0)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(func=cmd_evaluate)

    im = common(sub.add_parser("importance", help="permutation feature importance"))
    im.add_argument("--model-file", required=True)
    im.add_argument("--data", required=True)
    im.add_argument("--range", nargs=2, metavar=("START", "END"))
    im.add_argument("--seed", type=int, default=0)
    im.add_argument("--out-dir", required=True)
    im.set_defaults(func=cmd_importance)
    return p


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        with warnings.catch_warnings():
            if not a.verbose:
                warnings.simplefilter("ignore")
            return a.func(a)
    except EnspostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
