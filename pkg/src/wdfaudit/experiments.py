"""Resampling experiments: fairness fragility, empirical vs worst-case vs true,
and regularizer curves over the radius."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, empirical_fairness, make_spec, sup_norm
from .distance import profile as distance_profile
from .drune import DOWNWARD, UPWARD, audit_profile, build_instance, regularizer_curve
from .errors import DataError, GroupMassError, TrainingError
from .models import train

SCENARIOS = ("fragility-retrain", "fragility-fixed", "triple-comparison", "single-audit", "sweep")
FRAGILITY_METRICS = ("dp", "eo", "eodds")


@dataclass
class ExperimentConfig:
    scenario: str = "triple-comparison"
    reps: int = 500
    subsample: int | None = 1000
    delta: float = 0.01
    q: float = 2.0
    epsilon: float = 0.0
    metric: str = "dp"
    model: str = "linsvm"
    seed: int = 0
    stratify: bool = False
    metrics: tuple = FRAGILITY_METRICS
    deltas: tuple | None = None
    timings: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}")
        if self.reps < 1:
            raise DataError("reps must be at least 1")
        if self.subsample is not None and self.subsample < 1:
            raise DataError("subsample must be positive")

    def check(self, data: Dataset):
        if self.subsample is not None and self.subsample > data.n:
            raise DataError(f"subsample {self.subsample} exceeds the {data.n} available rows")


def _values(data: Dataset):
    return tuple(sorted(set(data.sensitive.tolist())))


def _draw(data: Dataset, size, rng, stratify=False) -> Dataset:
    if size is None or size >= data.n and not stratify:
        return data
    if not stratify:
        return data.subset(np.sort(rng.choice(data.n, size, replace=False)))
    vals = _values(data)
    per = size // len(vals)
    idx = []
    for v in vals:
        pool = np.flatnonzero(data.sensitive == v)
        idx.append(rng.choice(pool, min(per, pool.size), replace=False))
    return data.subset(np.sort(np.concatenate(idx)))


def _scalar(F) -> float:
    F = np.asarray(F)
    return float(F[0]) if F.shape[0] == 1 else sup_norm(F)


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return {"count": 0}
    q = np.quantile(v, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {
        "count": int(v.size),
        "mean": float(v.mean()),
        "std": float(v.std()),
        "q05": float(q[0]),
        "q25": float(q[1]),
        "median": float(q[2]),
        "q75": float(q[3]),
        "q95": float(q[4]),
    }


class RowWriter:
    """Append-only CSV sink flushed after every rep (no-op without a path)."""

    def __init__(self, path, header):
        self.fh = None
        if path is not None:
            self.fh = open(path, "w", newline="")
            self.w = csv.writer(self.fh)
            self.w.writerow(header)
            self.fh.flush()

    def write(self, row):
        if self.fh is not None:
            self.w.writerow([repr(v) if isinstance(v, float) else v for v in row])
            self.fh.flush()

    def close(self):
        if self.fh is not None:
            self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ----------------------------------------------------------------------------
# fragility
# ----------------------------------------------------------------------------
@dataclass
class FragilityResult:
    scenario: str
    values: dict
    skipped: int
    summary: dict = field(default_factory=dict)
    runtime: float | None = None

    def to_dict(self, timings=False):
        out = {"scenario": self.scenario, "skipped": self.skipped, "summary": self.summary,
               "values": {k: list(v) for k, v in self.values.items()}}
        if timings:
            out["runtime_s"] = self.runtime
        return out


def run_fragility(config: ExperimentConfig, data: Dataset, out_csv=None, model=None) -> FragilityResult:
    """Spread of fairness metrics across resamples.

    ``fragility-retrain`` fits a new model on every resample;
    ``fragility-fixed`` fits once on the full data (or uses ``model``) and
    only resamples.
    """
    config.check(data)
    t0 = time.perf_counter()
    vals = _values(data)
    specs = {k: make_spec(k, vals) for k in config.metrics}
    retrain = config.scenario != "fragility-fixed"
    fixed = model
    if fixed is None and not retrain:
        fixed = train(config.model, data, seed=config.seed)
    values = {k: [] for k in specs}
    skipped = 0
    with RowWriter(out_csv, ["rep", "scenario", "metric", "value"]) as sink:
        for rep, ss in enumerate(np.random.SeedSequence(config.seed).spawn(config.reps)):
            rng = np.random.default_rng(ss)
            sub = _draw(data, config.subsample, rng, config.stratify)
            try:
                clf = train(config.model, sub, seed=int(rng.integers(2**31))) if retrain else fixed
                row = {k: _scalar(empirical_fairness(sub, sp, clf)) for k, sp in specs.items()}
            except (GroupMassError, TrainingError):
                skipped += 1
                continue
            for k, v in row.items():
                values[k].append(v)
                sink.write([rep, config.scenario, k, v])
    res = FragilityResult(config.scenario, values, skipped, {k: summarize(v) for k, v in values.items()})
    res.runtime = time.perf_counter() - t0
    return res


# ----------------------------------------------------------------------------
# empirical vs worst-case vs true
# ----------------------------------------------------------------------------
@dataclass
class AuditRunRecord:
    rep: int
    empirical: list
    worst: list
    true: list
    S: list
    I: list
    runtime: float | None = None

    @property
    def covered(self) -> bool:
        return all(w >= t for w, t in zip(self.worst, self.true))


@dataclass
class TripleResult:
    records: list
    skipped: int
    config: dict

    @property
    def coverage(self) -> float:
        if not self.records:
            return float("nan")
        return sum(r.covered for r in self.records) / len(self.records)

    def to_dict(self, timings=False):
        recs = []
        for r in self.records:
            d = asdict(r)
            if not timings:
                d.pop("runtime")
            recs.append(d)
        first = lambda key: [getattr(r, key)[0] for r in self.records]  # noqa: E731
        return {
            "config": self.config,
            "coverage": self.coverage,
            "skipped": self.skipped,
            "summary": {k: summarize(first(k)) for k in ("empirical", "worst", "true", "S", "I")},
            "records": recs,
        }

    def long_rows(self):
        for r in self.records:
            for series in ("empirical", "worst", "true"):
                for i, v in enumerate(getattr(r, series)):
                    yield [r.rep, i, series, v]


def run_triple(config: ExperimentConfig, data: Dataset, out_csv=None, **profile_kw) -> TripleResult:
    """Per rep: subsample, train, audit; ``true`` is the same model scored on all of ``data``."""
    config.check(data)
    spec = make_spec(config.metric, _values(data), config.epsilon)
    records, skipped = [], 0
    header = ["rep", "constraint", "empirical", "worst", "true", "S", "I"]
    with RowWriter(out_csv, header) as sink:
        for rep, ss in enumerate(np.random.SeedSequence(config.seed).spawn(config.reps)):
            t0 = time.perf_counter()
            rng = np.random.default_rng(ss)
            sub = _draw(data, config.subsample, rng, config.stratify)
            try:
                model = train(config.model, sub, seed=int(rng.integers(2**31)))
                prof = distance_profile(sub, model, 2.0 if np.isinf(config.q) else config.q, **profile_kw)
                audits = audit_profile(prof, sub, spec, config.delta, config.q)
                true = empirical_fairness(data, spec, model)
            except (GroupMassError, TrainingError):
                skipped += 1
                continue
            F = [a.fairness for a in audits]
            rec = AuditRunRecord(rep, F, [a.upper for a in audits], [float(t) for t in true],
                                 [a.s_reg.value for a in audits], [a.i_reg.value for a in audits],
                                 time.perf_counter() - t0)
            records.append(rec)
            for i in range(len(F)):
                sink.write([rep, i, rec.empirical[i], rec.worst[i], rec.true[i], rec.S[i], rec.I[i]])
    return TripleResult(records, skipped, _config_dict(config))


# ----------------------------------------------------------------------------
# regularizer curve
# ----------------------------------------------------------------------------
@dataclass
class SweepResult:
    deltas: list
    S: list  # one curve per constraint
    I: list
    config: dict

    def to_dict(self, timings=False):
        return {"config": self.config, "deltas": self.deltas, "S": self.S, "I": self.I}

    def long_rows(self):
        for name, curves in (("S", self.S), ("I", self.I)):
            for i, curve in enumerate(curves):
                for d, v in zip(self.deltas, curve):
                    yield [i, name, d, v]


DEFAULT_GRID = tuple(float(x) for x in np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 25)]))


def run_regularizer_sweep(config: ExperimentConfig, data: Dataset, delta_grid=None, model=None,
                          **profile_kw) -> SweepResult:
    """``S(delta)`` and ``I(delta)`` for one trained model over a sorted grid."""
    config.check(data)
    grid = np.asarray(delta_grid if delta_grid is not None else (config.deltas or DEFAULT_GRID), dtype=np.float64)
    if np.any(np.diff(grid) < 0) or np.any(grid < 0):
        raise DataError("delta grid must be non-negative and sorted ascending")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    sub = _draw(data, config.subsample, rng, config.stratify)
    if model is None:
        model = train(config.model, sub, seed=int(rng.integers(2**31)))
    spec = make_spec(config.metric, _values(data), config.epsilon)
    prof = distance_profile(sub, model, 2.0 if np.isinf(config.q) else config.q, **profile_kw)
    S, I = [], []
    for i in range(spec.m):
        for direction, store in ((UPWARD, S), (DOWNWARD, I)):
            inst = build_instance(prof, sub, spec, direction, 0.0, config.q, i)
            store.append([float(v) for v in regularizer_curve(inst, grid)])
    return SweepResult([float(d) for d in grid], S, I, _config_dict(config))


def _config_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["q"] = "inf" if np.isinf(config.q) else config.q
    d["metrics"] = list(d["metrics"])
    d["deltas"] = None if d["deltas"] is None else list(d["deltas"])
    d.pop("timings")
    return d
