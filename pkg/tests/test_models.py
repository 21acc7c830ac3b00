import json

import numpy as np
import pytest

from enspost import artifact
from enspost.emos import fit_emos
from enspost.errors import ArtifactFormatError, FeatureMismatch, IoError, UnknownModel, UnknownStation
from enspost.models import MODEL_NAMES, make_model, station_index
from enspost.network import count_parameters

FAST = {"qrf": {"n_trees": 15}, "emos-loc-bst": {"max_iter": 100}}
NET_FAST = {"run_count": 2, "batch_size": 32, "epochs": 4}


def fast(name):
    return FAST.get(name, NET_FAST if name not in ("emos-gl", "emos-loc") else {})


@pytest.fixture(scope="module")
def fitted_models(small_split):
    tr, _ = small_split
    return {name: make_model(name, **fast(name)).fit(tr) for name in MODEL_NAMES}


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_artifact_round_trip_is_bit_exact(name, fitted_models, small_split, tmp_path):
    model = fitted_models[name]
    path = tmp_path / f"{name}.json"
    artifact.save(model, path)
    loaded = artifact.load(path)
    a, b = model.predict(small_split[1]), loaded.predict(small_split[1])
    if isinstance(a, tuple):
        assert all(np.array_equal(u, v) for u, v in zip(a, b))
    else:
        assert np.array_equal(a, b)
    assert np.array_equal(model.crps(small_split[1]), loaded.crps(small_split[1]))
    doc = json.loads(path.read_text())
    assert doc["format_version"] == artifact.FORMAT_VERSION and doc["family"] == name


def test_family_structure(fitted_models):
    assert fitted_models["emos-gl"].coeffs.coef.shape == (4,)
    assert fitted_models["emos-loc"].coeffs.coef.shape == (6, 4)
    assert len(fitted_models["nn-aux-emb"].runs) == 2
    assert fitted_models["fcn"].features == ("t2m_mean", "t2m_std")
    assert len(fitted_models["fcn-aux"].features) == 40
    m = fitted_models["nn-aux-emb"]
    assert m.metadata["n_parameters"] == count_parameters(40, 6, 32, 2) == m.runs[0].size


def test_version_mismatch_is_an_error(fitted_models, tmp_path):
    doc = artifact.to_document(fitted_models["emos-gl"])
    doc["format_version"] = 99
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ArtifactFormatError):
        artifact.load(path)
    path.write_text("{not json")
    with pytest.raises(ArtifactFormatError):
        artifact.load(path)
    path.write_text(json.dumps({"format_version": 1, "family": "gbm", "payload": {}}))
    with pytest.raises(ArtifactFormatError):
        artifact.load(path)
    with pytest.raises(IoError):
        artifact.load(tmp_path / "missing.json")


def test_unknown_model():
    with pytest.raises(UnknownModel):
        make_model("svm")


def test_station_lookup_by_identifier(fitted_models, small_split):
    _, va = small_split
    model = fitted_models["emos-loc"]
    sub = va.subset(va.station >= 3)
    assert np.array_equal(station_index(model.station_ids, sub), sub.station)
    from enspost.data import ForecastDataset, StationTable
    other = ForecastDataset(StationTable(["ZZ"], [0.0], [0.0], [0.0]), np.zeros(3, dtype=int),
                            va.dates[:3], va.X[:3], va.y[:3], va.feature_spec)
    with pytest.raises(UnknownStation):
        model.predict(other)


def test_missing_features(fitted_models, small_split):
    from enspost.data import FeatureSpec, ForecastDataset
    _, va = small_split
    names = ("t2m_mean", "t2m_std")
    small = ForecastDataset(va.stations, va.station, va.dates, va.columns(names), va.y, FeatureSpec(names))
    fitted_models["fcn"].crps(small)                      # t2m inputs suffice
    with pytest.raises(FeatureMismatch):
        fitted_models["fcn-aux"].crps(small)


def test_emos_wrapper_matches_module(fitted_models, small_split):
    tr, _ = small_split
    assert np.array_equal(fitted_models["emos-gl"].coeffs.coef, fit_emos(tr, "global").coef)


def test_fcn_close_to_emos_global_on_linear_data():
    from enspost.data import SyntheticConfig, generate_synthetic, split_by_period
    cfg = SyntheticConfig(S=20, T=730, seed=5, nonlinearity_amplitude=0.0, station_bias_scale=0.0)
    tr, va = split_by_period(generate_synthetic(cfg), ("2015-01-01", "2015-12-31"), ("2016-01-01", "2016-12-31"))
    e = make_model("emos-gl").fit(tr).crps(va).mean()
    f = make_model("fcn", run_count=3).fit(tr).crps(va).mean()
    assert abs(f / e - 1) < 0.02
