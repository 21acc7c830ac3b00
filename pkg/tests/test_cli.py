import csv
import json

import numpy as np
import pytest

from enspost import artifact
from enspost.cli import main
from enspost.data import load_csv
from enspost.errors import (
    DataError, DivergedTraining, EnspostError, NumericalError, UsageError, UnknownModel,
)


@pytest.fixture(scope="module")
def archive(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "archive.csv"
    assert main(["generate", "--out", str(path), "--stations", "4", "--days", "400", "--seed", "7"]) == 0
    return path


def test_generate_writes_s_times_t_rows(archive):
    with open(archive) as fh:
        assert sum(1 for _ in csv.reader(fh)) - 1 == 4 * 400
    ds = load_csv(archive)
    assert ds.n == 1600 and len(ds.stations) == 4


def test_generate_is_deterministic(archive, tmp_path):
    again = tmp_path / "again.csv"
    assert main(["generate", "--out", str(again), "--stations", "4", "--days", "400", "--seed", "7"]) == 0
    assert again.read_bytes() == archive.read_bytes()


def test_generate_rejects_invalid_config(tmp_path, capsys):
    assert main(["generate", "--out", str(tmp_path / "x.csv"), "--stations", "0"]) == 1
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_train_emos_and_predict(archive, tmp_path):
    art = tmp_path / "emos.json"
    assert main(["train", "--model", "emos-gl", "--data", str(archive),
                 "--range", "2015-01-01", "2015-09-30", "--out", str(art)]) == 0
    model = artifact.load(art)
    assert model.coeffs.coef.shape == (4,)
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model-file", str(art), "--data", str(archive),
                 "--range", "2015-10-01", "2016-02-04", "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * 127
    assert all(float(r["sigma"]) > 0 for r in rows)
    assert (tmp_path / "pred.txt").exists()


def test_qrf_artifact_reproduces_quantiles(archive, tmp_path):
    art = tmp_path / "qrf.json"
    assert main(["train", "--model", "qrf", "--trees", "10", "--data", str(archive),
                 "--range", "2015-01-01", "2015-09-30", "--out", str(art)]) == 0
    model = artifact.load(art)
    probe = load_csv(archive)
    probe = probe.subset(np.arange(probe.n) % 16 == 0)
    assert probe.n == 100
    fresh = artifact.load(art).predict(probe)
    assert np.array_equal(model.predict(probe), fresh)


def test_hyperparameter_flags_reach_the_model(archive, tmp_path):
    art = tmp_path / "fcn.json"
    assert main(["train", "--model", "fcn", "--runs", "2", "--epochs", "3", "--seed", "5", "--batch-size", "32",
                 "--data", str(archive), "--range", "2015-01-01", "2015-09-30", "--out", str(art)]) == 0
    m = artifact.load(art)
    assert m.hyper["run_count"] == 2 and m.hyper["epochs"] == 3 and m.hyper["seed"] == 5
    assert len(m.runs) == 2


def test_too_few_samples_for_batch_is_a_data_error(archive, tmp_path, capsys):
    assert main(["train", "--model", "fcn", "--data", str(archive), "--range", "2015-01-01",
                 "2015-09-30", "--out", str(tmp_path / "f.json")]) == 2
    assert "batch size" in capsys.readouterr().err


def test_evaluate_writes_tables(archive, tmp_path):
    arts = []
    for name in ("emos-gl", "emos-loc"):
        p = tmp_path / f"{name}.json"
        assert main(["train", "--model", name, "--data", str(archive),
                     "--range", "2015-01-01", "2015-09-30", "--out", str(p)]) == 0
        arts.append(str(p))
    out_dir = tmp_path / "report"
    assert main(["evaluate", *arts, "--data", str(archive), "--range", "2015-10-01", "2016-02-04",
                 "--reference", "raw", "--reference", "emos-gl", "--importance",
                 "--out-dir", str(out_dir)]) == 0
    for stem in ("overall_crps", "station_crps", "crpss_vs_raw", "crpss_vs_emos-gl", "best_model",
                 "histograms", "calibration", "significance", "runtime", "importance_emos-gl"):
        assert (out_dir / f"{stem}.txt").exists() and (out_dir / f"{stem}.csv").exists()
    with open(out_dir / "crpss_vs_emos-gl.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    assert all(float(r["emos-gl"]) == 0.0 for r in rows)
    with open(out_dir / "crpss_vs_raw.csv") as fh:
        assert all(float(r["raw"]) == 0.0 for r in csv.DictReader(fh))


def test_importance_command(archive, tmp_path):
    art = tmp_path / "emos.json"
    main(["train", "--model", "emos-gl", "--data", str(archive), "--out", str(art)])
    assert main(["importance", "--model-file", str(art), "--data", str(archive),
                 "--out-dir", str(tmp_path)]) == 0
    with open(tmp_path / "importance_emos-gl.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["feature"] for r in rows][0] == "t2m_mean"


def test_print_config(capsys, tmp_path):
    assert main(["train", "--model", "nn-aux-emb", "--data", "nope.csv", "--out", "x.json",
                 "--hidden", "64", "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["hyperparameters"]["hidden_nodes"] == 64
    assert cfg["hyperparameters"]["run_count"] == 10
    assert not (tmp_path / "x.json").exists()


def test_exit_codes(tmp_path, capsys):
    assert main(["train", "--model", "svm", "--data", "x.csv", "--out", "y.json"]) == 1
    assert main(["train", "--model", "emos-gl", "--data", str(tmp_path / "missing.csv"),
                 "--out", str(tmp_path / "y.json")]) == 2
    assert main(["predict", "--model-file", str(tmp_path / "missing.json"), "--data", "x.csv",
                 "--out", "p.csv"]) == 2
    assert main(["frobnicate"]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text('{"format_version": 2, "family": "qrf", "payload": {}}')
    assert main(["predict", "--model-file", str(bad), "--data", "x.csv", "--out", "p.csv"]) == 2
    capsys.readouterr()


def test_error_hierarchy_exit_codes():
    assert UsageError.exit_code == 1 and UnknownModel.exit_code == 1
    assert DataError.exit_code == 2 and EnspostError.exit_code == 2
    assert NumericalError.exit_code == 3 and DivergedTraining.exit_code == 3
