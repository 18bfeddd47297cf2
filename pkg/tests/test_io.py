import json

import numpy as np
import pandas as pd
import pytest

from wdfaudit.data import Dataset
from wdfaudit.errors import DataError
from wdfaudit.io import (
    dataset_frame,
    destandardize,
    frame_to_dataset,
    load_config,
    load_csv,
    write_dataset,
    write_json,
    write_worst_case,
)


def frame():
    return pd.DataFrame({
        "age": [25, 40, 31, 58, 47, 22],
        "income": [1.0, 3.5, 2.0, 4.0, 2.5, 0.5],
        "job": ["a", "b", "a", "c", "b", "a"],
        "sex": ["Male", "Female", "Female", "Male", "Female", "Male"],
        "outcome": [">50K", "<=50K", "<=50K", ">50K", ">50K", "<=50K"],
    })


CFG = {
    "sensitive": "sex",
    "label": "outcome",
    "sensitive_transform": {"map": {"Male": 1, "Female": 0}},
    "label_transform": {"map": {">50K": 1, "<=50K": 0}},
}


class TestIngestion:
    def test_maps_and_one_hot(self):
        ds = frame_to_dataset(frame(), CFG)
        assert ds.sensitive.tolist() == [1, 0, 0, 1, 0, 1]
        assert ds.labels.tolist() == [1, 0, 0, 1, 1, 0]
        assert ds.feature_names == ("age", "income", "job_a", "job_b", "job_c")
        assert np.allclose(ds.features.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(ds.features.std(axis=0), 1, atol=1e-12)

    def test_destandardize_roundtrip(self):
        ds = frame_to_dataset(frame(), CFG)
        raw = destandardize(ds.features, ds.standardization)
        assert np.allclose(raw[:, 0], frame()["age"].to_numpy())

    def test_median_and_threshold(self):
        cfg = dict(CFG, sensitive="age", sensitive_transform="median",
                   transforms={"income": {"threshold": 2.0}}, standardize=False)
        ds = frame_to_dataset(frame(), cfg)
        assert ds.sensitive.tolist() == [0, 1, 0, 1, 1, 0]
        assert ds.features[:, 0].tolist() == [0, 1, 1, 1, 1, 0]

    def test_feature_subset_and_drop(self):
        ds = frame_to_dataset(frame(), dict(CFG, features=["age"]))
        assert ds.feature_names == ("age",)
        ds = frame_to_dataset(frame(), dict(CFG, drop=["job"]))
        assert ds.feature_names == ("age", "income")

    def test_errors(self):
        with pytest.raises(DataError):
            frame_to_dataset(frame(), {"sensitive": "sex"})
        with pytest.raises(DataError):
            frame_to_dataset(frame(), dict(CFG, sensitive="race"))
        with pytest.raises(DataError):
            frame_to_dataset(frame(), dict(CFG, sensitive_transform={"map": {"Male": 1}}))
        with pytest.raises(DataError):
            frame_to_dataset(frame(), dict(CFG, sensitive_transform=None))

    def test_missing_values(self):
        f = frame()
        f.loc[2, "income"] = np.nan
        with pytest.raises(DataError):
            frame_to_dataset(f, CFG)
        assert frame_to_dataset(f, dict(CFG, dropna=True)).n == 5

    def test_csv_and_yaml(self, tmp_path):
        frame().to_csv(tmp_path / "d.csv", index=False)
        (tmp_path / "c.yaml").write_text(
            "sensitive: sex\nlabel: outcome\nsensitive_transform:\n  map: {Male: 1, Female: 0}\n"
            "label_transform:\n  map: {'>50K': 1, '<=50K': 0}\n"
        )
        ds = load_csv(tmp_path / "d.csv", load_config(tmp_path / "c.yaml"))
        assert ds.n == 6 and ds.d == 5

    def test_bad_config(self, tmp_path):
        (tmp_path / "c.yaml").write_text("- 1\n- 2\n")
        with pytest.raises(DataError):
            load_config(tmp_path / "c.yaml")
        assert load_config(None) == {}


class TestWriters:
    def test_dataset_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(rng.standard_normal((10, 2)), rng.integers(0, 2, 10), rng.integers(0, 2, 10), ("u", "v"))
        write_dataset(tmp_path / "out.csv", ds)
        back = load_csv(tmp_path / "out.csv", {"sensitive": "a", "label": "y", "standardize": False})
        assert np.array_equal(back.features, ds.features)
        assert back.sensitive.tolist() == ds.sensitive.tolist()

    def test_worst_case_columns(self, tmp_path):
        ds = Dataset(np.ones((2, 1)), [0, 1], [1, 0], ("x",))
        write_worst_case(tmp_path / "w.csv", ds, [0.25, 0.75], [3, 4], "sex", "outcome")
        f = pd.read_csv(tmp_path / "w.csv")
        assert list(f.columns) == ["x", "sex", "outcome", "weight", "source"]
        assert f["weight"].tolist() == [0.25, 0.75]

    def test_frame_units(self):
        ds = frame_to_dataset(frame(), CFG)
        assert np.allclose(dataset_frame(ds)["age"], frame()["age"])
        assert np.allclose(dataset_frame(ds, raw_units=False)["age"], ds.features[:, 0])

    def test_json(self, tmp_path, capsys):
        write_json(tmp_path / "r.json", {"b": 1, "a": 2})
        assert (tmp_path / "r.json").read_text() == '{\n  "a": 2,\n  "b": 1\n}\n'
        write_json(None, "{}")
        assert capsys.readouterr().out == "{}\n"
        assert json.loads((tmp_path / "r.json").read_text()) == {"a": 2, "b": 1}
