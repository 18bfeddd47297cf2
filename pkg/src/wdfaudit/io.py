"""CSV ingestion, audit configuration files and output writers."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .data import Dataset
from .errors import DataError


def load_config(path) -> dict:
    """YAML or JSON mapping (JSON parses as YAML)."""
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise DataError("config file must hold a mapping")
    return cfg


def _apply_transform(col: pd.Series, spec) -> pd.Series:
    """``median``, ``threshold`` (>= value -> 1) or an explicit ``map``."""
    if spec is None:
        return col
    if isinstance(spec, str):
        spec = {spec: True}
    if "map" in spec:
        mapping = {str(k): v for k, v in spec["map"].items()}
        out = col.astype(str).str.strip().map(mapping)
        if out.isna().any():
            missing = sorted(set(col[out.isna()].astype(str)))[:5]
            raise DataError(f"values {missing} of column {col.name!r} are not in the map")
        return out
    if spec.get("median"):
        col = pd.to_numeric(col, errors="raise")
        return (col >= col.median()).astype(np.int64)
    if "threshold" in spec:
        col = pd.to_numeric(col, errors="raise")
        return (col >= float(spec["threshold"])).astype(np.int64)
    raise DataError(f"unknown transform {spec!r}")


def standardize(X: np.ndarray, names) -> tuple[np.ndarray, dict]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (X - mean) / std, {"columns": list(names), "mean": mean.tolist(), "std": std.tolist()}


def frame_to_dataset(frame: pd.DataFrame, config: dict) -> Dataset:
    cfg = dict(config)
    try:
        s_col, y_col = cfg["sensitive"], cfg["label"]
    except KeyError:
        raise DataError("config must name the 'sensitive' and 'label' columns") from None
    for c in (s_col, y_col):
        if c not in frame.columns:
            raise DataError(f"column {c!r} not found in the data")
    frame = frame.drop(columns=[c for c in cfg.get("drop", []) if c in frame.columns])
    if cfg.get("dropna"):
        frame = frame.dropna().reset_index(drop=True)
    a = _apply_transform(frame[s_col], cfg.get("sensitive_transform"))
    y = _apply_transform(frame[y_col], cfg.get("label_transform"))
    feats = cfg.get("features") or [c for c in frame.columns if c not in (s_col, y_col)]
    X = frame[feats].copy()
    for name, tr in (cfg.get("transforms") or {}).items():
        if name in X.columns:
            X[name] = _apply_transform(X[name], tr)
    X = pd.get_dummies(X, dtype=np.float64)
    try:
        Xv = X.to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"features must be numeric after encoding: {exc}") from None
    names = [str(c) for c in X.columns]
    std = None
    if cfg.get("standardize", True):
        Xv, std = standardize(Xv, names)
    try:
        a = pd.to_numeric(a, errors="raise").to_numpy()
        y = pd.to_numeric(y, errors="raise").to_numpy()
    except (TypeError, ValueError):
        raise DataError("sensitive and label columns must be numeric or mapped to integers") from None
    return Dataset(Xv, a, y, tuple(names), std)


def load_csv(path, config: dict | None = None) -> Dataset:
    """Read a headed CSV and encode it per ``config``."""
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if frame.empty:
        raise DataError("CSV has no rows")
    return frame_to_dataset(frame, config or {})


def destandardize(X: np.ndarray, standardization: dict | None) -> np.ndarray:
    if not standardization:
        return np.asarray(X)
    return np.asarray(X) * np.asarray(standardization["std"]) + np.asarray(standardization["mean"])


def dataset_frame(data: Dataset, sensitive: str = "a", label: str = "y", raw_units: bool = True) -> pd.DataFrame:
    X = destandardize(data.features, data.standardization) if raw_units else data.features
    frame = pd.DataFrame(X, columns=list(data.feature_names))
    frame[sensitive] = data.sensitive
    frame[label] = data.labels
    return frame


def write_dataset(path, data: Dataset, sensitive: str = "a", label: str = "y"):
    dataset_frame(data, sensitive, label).to_csv(path, index=False, float_format="%.17g")


def write_worst_case(path, data: Dataset, weights, source, sensitive: str = "a", label: str = "y"):
    """Perturbed sample in input units with ``weight`` and ``source`` columns."""
    frame = dataset_frame(data, sensitive, label)
    frame["weight"] = np.asarray(weights)
    frame["source"] = np.asarray(source)
    frame.to_csv(path, index=False, float_format="%.17g")


def write_distances(path, profile):
    profile.to_frame().to_csv(path, index=False, float_format="%.17g")


def write_json(path, payload: dict | str):
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True)
    if path is None or str(path) == "-":
        print(text)
    else:
        Path(path).write_text(text + ("" if text.endswith("\n") else "\n"))
