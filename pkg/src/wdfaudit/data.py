"""Datasets, fairness specifications and the empirical fairness functional.

A fairness notion is a list of ``m`` constraints, each a pair of disjoint
cells ``(S0, S1)`` of the (sensitive, label) grid.  For a sample
``z = (x, a, y)`` the indicator vector ``U`` has length ``2m``: entry ``i``
flags ``(a, y) in S0_i`` and entry ``i + m`` flags ``(a, y) in S1_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, GroupMassError

Cell = tuple[int, int]


@dataclass(frozen=True)
class Dataset:
    """Immutable table of samples ``(x_i, a_i, y_i)``."""

    features: np.ndarray
    sensitive: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    standardization: dict | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        a = np.asarray(self.sensitive)
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] < 1:
            raise DataError("features must be a non-empty N x d matrix")
        n = X.shape[0]
        if a.shape != (n,) or y.shape != (n,):
            raise DataError("sensitive and labels must be N-vectors matching features")
        if not np.all(np.isfinite(X)):
            raise DataError("feature rows contain non-finite values")
        if not np.all(np.isin(y, (0, 1))):
            raise DataError("labels must be 0 or 1")
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise DataError("sensitive values must be integers")
        X.setflags(write=False)
        a = a.astype(np.int64)
        a.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "sensitive", a)
        object.__setattr__(self, "labels", y)
        if not self.feature_names:
            names = tuple(f"x{j}" for j in range(X.shape[1]))
            object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.sensitive[idx],
            self.labels[idx],
            self.feature_names,
            self.standardization,
        )

    def with_features(self, features) -> "Dataset":
        return Dataset(features, self.sensitive, self.labels, self.feature_names, self.standardization)


@dataclass(frozen=True)
class FairnessSpec:
    """``m`` constraints given as disjoint cell sets, plus a tolerance."""

    groups: tuple[tuple[frozenset, frozenset], ...]
    epsilon: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        groups = tuple((frozenset(map(tuple, s0)), frozenset(map(tuple, s1))) for s0, s1 in self.groups)
        if not groups:
            raise DataError("a fairness spec needs at least one constraint")
        for s0, s1 in groups:
            if not s0 or not s1:
                raise DataError("both cell sets of a constraint must be nonempty")
            if s0 & s1:
                raise DataError("S0 and S1 must be disjoint")
        if self.epsilon < 0:
            raise DataError("epsilon must be non-negative")
        object.__setattr__(self, "groups", groups)

    @property
    def m(self) -> int:
        return len(self.groups)

    def constraint(self, i: int) -> "FairnessSpec":
        return FairnessSpec((self.groups[i],), self.epsilon, f"{self.name}[{i}]")

    def with_epsilon(self, epsilon: float) -> "FairnessSpec":
        return FairnessSpec(self.groups, epsilon, self.name)


@dataclass(frozen=True)
class GroupStats:
    """Empirical masses of the ``2m`` cells (``mu = counts / N``)."""

    mu: np.ndarray
    counts: np.ndarray
    n: int = field(default=0)

    def require_positive(self):
        if np.any(self.counts == 0):
            empty = np.flatnonzero(self.counts == 0).tolist()
            raise GroupMassError(f"group(s) {empty} have zero empirical mass")
        return self


def demographic_parity(values: Sequence[int] = (0, 1), epsilon: float = 0.0) -> FairnessSpec:
    """Pairwise positive-rate parity across the given sensitive values."""
    groups = []
    for a, b in combinations(values, 2):
        groups.append(({(a, 0), (a, 1)}, {(b, 0), (b, 1)}))
    return FairnessSpec(tuple(groups), epsilon, "demographic-parity")


def equal_opportunity(values: Sequence[int] = (0, 1), epsilon: float = 0.0) -> FairnessSpec:
    """True-positive-rate parity (cells with ``y = 1``)."""
    groups = [({(a, 1)}, {(b, 1)}) for a, b in combinations(values, 2)]
    return FairnessSpec(tuple(groups), epsilon, "equal-opportunity")


def equalized_odds(values: Sequence[int] = (0, 1), epsilon: float = 0.0) -> FairnessSpec:
    """False- and true-positive-rate parity; constraint order is ``y = 0`` then ``y = 1``."""
    groups = []
    for a, b in combinations(values, 2):
        for y in (0, 1):
            groups.append(({(a, y)}, {(b, y)}))
    return FairnessSpec(tuple(groups), epsilon, "equalized-odds")


METRICS = {
    "dp": demographic_parity,
    "demographic-parity": demographic_parity,
    "eo": equal_opportunity,
    "equal-opportunity": equal_opportunity,
    "eodds": equalized_odds,
    "equalized-odds": equalized_odds,
}


def make_spec(metric: str, values: Sequence[int] = (0, 1), epsilon: float = 0.0) -> FairnessSpec:
    try:
        return METRICS[metric](values, epsilon)
    except KeyError:
        raise DataError(f"unknown metric {metric!r}; choose from {sorted(METRICS)}") from None


def encode_u(a: int, y: int, spec: FairnessSpec) -> np.ndarray:
    """Indicator vector ``U(a, y)`` of length ``2m``."""
    m = spec.m
    u = np.zeros(2 * m, dtype=np.int64)
    cell = (int(a), int(y))
    for i, (s0, s1) in enumerate(spec.groups):
        u[i] = cell in s0
        u[i + m] = cell in s1
    return u


def encode_matrix(sensitive, labels, spec: FairnessSpec) -> np.ndarray:
    """Row-wise ``U`` for a whole sample, shape ``(N, 2m)``."""
    sensitive = np.asarray(sensitive)
    labels = np.asarray(labels)
    m = spec.m
    U = np.zeros((sensitive.shape[0], 2 * m), dtype=np.int64)
    for i, (s0, s1) in enumerate(spec.groups):
        U[:, i] = _in_cells(sensitive, labels, s0)
        U[:, i + m] = _in_cells(sensitive, labels, s1)
    return U


def _in_cells(sensitive, labels, cells: Iterable[Cell]) -> np.ndarray:
    mask = np.zeros(sensitive.shape[0], dtype=bool)
    for a, y in cells:
        mask |= (sensitive == a) & (labels == y)
    return mask


def group_stats(data: Dataset, spec: FairnessSpec) -> GroupStats:
    U = encode_matrix(data.sensitive, data.labels, spec)
    counts = U.sum(axis=0)
    return GroupStats(counts / data.n, counts, data.n)


def phi(u, mu) -> np.ndarray:
    """Ratio map ``phi_i = u_i / mu_i - u_{i+m} / mu_{i+m}``."""
    u = np.asarray(u, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if u.shape != mu.shape or u.shape[-1] % 2:
        raise DataError("u and mu must be 2m-vectors of equal shape")
    if np.any(mu <= 0):
        raise GroupMassError("phi needs every group mass to be positive")
    m = u.shape[-1] // 2
    return u[..., :m] / mu[..., :m] - u[..., m:] / mu[..., m:]


def _fsum_mean(values: np.ndarray, n: int) -> np.ndarray:
    # exactly rounded sums make the result independent of row order
    return np.array([math.fsum(col) / n for col in np.atleast_2d(values.T)])


def per_sample_scores(data: Dataset, spec: FairnessSpec, predictions, stats: GroupStats | None = None) -> np.ndarray:
    """``h(x_i) * phi(U_i, mu)`` for every row, shape ``(N, m)``."""
    stats = (stats or group_stats(data, spec)).require_positive()
    U = encode_matrix(data.sensitive, data.labels, spec)
    h = np.asarray(predictions, dtype=np.float64).reshape(-1, 1)
    return h * phi(U, np.broadcast_to(stats.mu, U.shape))


def fairness_from_predictions(data: Dataset, spec: FairnessSpec, predictions, stats: GroupStats | None = None) -> np.ndarray:
    scores = per_sample_scores(data, spec, predictions, stats)
    return _fsum_mean(scores, data.n)


def empirical_fairness(data: Dataset, spec: FairnessSpec, model) -> np.ndarray:
    """``F(P^N, theta)``: one signed disparity per constraint."""
    return fairness_from_predictions(data, spec, model.predict(data.features))


def fairness_score(x, a, y, spec: FairnessSpec, mu, model) -> float:
    """Per-sample score ``h(x) (1{S0}/p0 - 1{S1}/p1)`` of a single-constraint spec."""
    if spec.m != 1:
        raise DataError("fairness_score is defined for single-constraint specs")
    h = float(model.predict(np.atleast_2d(x))[0])
    return float(h * phi(encode_u(a, y, spec), mu)[0])


def sup_norm(values) -> float:
    return float(np.max(np.abs(values)))
