"""Worst-case regularizers, dual recovery and the fairness certificate.

For ``q < inf`` the empirical upward regularizer is a continuous knapsack:
maximize ``(1/N) sum w_i xi_i`` subject to ``(1/N) sum d_i^q xi_i <= delta^q``
with ``xi`` in ``[0, 1]^N``.  The downward regularizer swaps the roles of the
two groups.  For ``q = inf`` both reduce to counting points inside the
``delta`` band around the boundary.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .data import Dataset, FairnessSpec, encode_matrix, group_stats
from .distance import DistanceProfile, profile as distance_profile
from .kernels import greedy_fill

UPWARD = "upward"
DOWNWARD = "downward"
TOL = 1e-12


@dataclass(frozen=True)
class KnapsackInstance:
    omega: np.ndarray
    cost: np.ndarray  # d_i^q; +inf for items that cannot move
    capacity: float  # N * delta^q
    delta: float
    q: float
    distance: np.ndarray | None = None
    direction: str = UPWARD

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def movable(self) -> np.ndarray:
        return (self.omega > 0) & np.isfinite(self.cost)

    @classmethod
    def from_arrays(cls, omega, cost, n_budget: float, q: float = 2.0):
        """Raw instance with budget ``delta^q`` given directly (``capacity = N * n_budget``)."""
        omega = np.asarray(omega, dtype=np.float64)
        cost = np.asarray(cost, dtype=np.float64)
        delta = float(n_budget) ** (1.0 / q)
        return cls(omega, cost, omega.shape[0] * float(n_budget), delta, q)


@dataclass
class RegularizerResult:
    value: float
    xi: np.ndarray
    lambda_star: float
    fractional_index: int | None = None
    t_star: float = 1.0
    used: float = 0.0
    direction: str = UPWARD

    def summary(self) -> dict:
        lam = None if math.isnan(self.lambda_star) else self.lambda_star
        return {
            "value": self.value,
            "lambda_star": lam,
            "fractional_index": self.fractional_index,
            "t_star": self.t_star,
            "moved": int(np.count_nonzero(self.xi)),
        }


def _masks(profile: DistanceProfile, data: Dataset, spec: FairnessSpec, constraint: int, direction: str):
    U = encode_matrix(data.sensitive, data.labels, spec)
    m = spec.m
    s0 = U[:, constraint].astype(bool)
    s1 = U[:, constraint + m].astype(bool)
    pred = np.asarray(profile.predictions)
    if direction == UPWARD:
        # S0 points pushed into X+, S1 points pushed into X-
        return s0 & (pred == 0), profile.d_plus, s1 & (pred == 1), profile.d_minus
    if direction == DOWNWARD:
        return s0 & (pred == 1), profile.d_minus, s1 & (pred == 0), profile.d_plus
    raise ValueError(f"direction must be {UPWARD!r} or {DOWNWARD!r}")


def _group_masses(data, spec, constraint):
    stats = group_stats(data, spec).require_positive()
    return stats.mu[constraint], stats.mu[constraint + spec.m], stats


def build_instance(profile: DistanceProfile, data: Dataset, spec: FairnessSpec, direction: str = UPWARD,
                   delta: float = 0.0, q: float = 2.0, constraint: int = 0) -> KnapsackInstance:
    """Coefficients ``(omega_i, d_i)`` of the regularizer LP for one constraint."""
    p0, p1, _ = _group_masses(data, spec, constraint)
    m0, d0, m1, d1 = _masks(profile, data, spec, constraint, direction)
    n = data.n
    omega = np.zeros(n)
    dist = np.full(n, np.inf)
    omega[m0], dist[m0] = 1.0 / p0, d0[m0]
    omega[m1], dist[m1] = 1.0 / p1, d1[m1]
    # unreachable boundary: the point cannot move at finite cost
    omega[~np.isfinite(dist)] = 0.0
    if np.isinf(q):
        cost = dist.copy()
        capacity = float(delta)
    else:
        with np.errstate(over="ignore"):
            cost = dist ** q
        capacity = n * float(delta) ** q
    return KnapsackInstance(omega, cost, capacity, float(delta), float(q), dist, direction)


def _greedy_order(omega, cost):
    """Movable positive-cost items by descending ratio, ties by ascending index."""
    idx = np.flatnonzero((omega > 0) & np.isfinite(cost) & (cost > 0))
    ratio = omega[idx] / cost[idx]
    order = idx[np.lexsort((idx, -ratio))]
    return order, omega[order] / cost[order]


def knapsack_solve(inst: KnapsackInstance, backend=None) -> RegularizerResult:
    """Greedy fractional knapsack; exact for the continuous LP."""
    omega, cost = inst.omega, inst.cost
    n = inst.n
    free = (omega > 0) & (cost == 0)
    order, ratios = _greedy_order(omega, cost)
    safe_cost = np.where(np.isfinite(cost), cost, 0.0)
    xi, marginal, left = greedy_fill(order, safe_cost, max(inst.capacity, 0.0), backend)
    xi[free] = 1.0
    if marginal >= 0:
        lam = float(ratios[marginal])
        k = int(order[marginal])
        frac = k if 0.0 < xi[k] < 1.0 else None
        t_star = float(xi[k])
    else:
        lam, frac, t_star = 0.0, None, 1.0
    value = math.fsum(omega * xi) / n
    used = math.fsum(safe_cost * xi)
    return RegularizerResult(value, xi, lam, frac, t_star, used, inst.direction)


def regularizer(profile, data, spec, delta, q, direction=UPWARD, constraint=0, backend=None) -> RegularizerResult:
    if np.isinf(q):
        return regularizer_inf_norm_q_infty(profile, data, spec, delta, direction, constraint)
    return knapsack_solve(build_instance(profile, data, spec, direction, delta, q, constraint), backend)


def regularizer_inf_norm_q_infty(profile: DistanceProfile, data: Dataset, spec: FairnessSpec, delta: float,
                                 direction: str = UPWARD, constraint: int = 0) -> RegularizerResult:
    """Band count ``#{S0 movable, d <= delta}/n0 + #{S1 movable, d <= delta}/n1``.

    Evaluated in exact rational arithmetic and rounded once.
    """
    U = encode_matrix(data.sensitive, data.labels, spec)
    n0 = int(U[:, constraint].sum())
    n1 = int(U[:, constraint + spec.m].sum())
    _group_masses(data, spec, constraint)
    m0, d0, m1, d1 = _masks(profile, data, spec, constraint, direction)
    hit0 = m0 & (d0 <= delta)
    hit1 = m1 & (d1 <= delta)
    value = float(Fraction(int(hit0.sum()), n0) + Fraction(int(hit1.sum()), n1))
    xi = (hit0 | hit1).astype(np.float64)
    return RegularizerResult(value, xi, float("nan"), None, 1.0, 0.0, direction)


regularizer_q_infty = regularizer_inf_norm_q_infty


def band_bound(profile: DistanceProfile, data: Dataset, spec: FairnessSpec, delta: float, fairness,
               constraint: int = 0) -> float:
    """Sufficient band bound ``P(dist < delta) / min(p0, p1) + |F|``."""
    p0, p1, _ = _group_masses(data, spec, constraint)
    band = float(np.count_nonzero(profile.distance < delta)) / data.n
    return band / min(p0, p1) + abs(float(fairness))


def dual_value_instance(inst: KnapsackInstance, lam: float) -> float:
    """``lam * delta^q + (1/N) sum max(0, omega_i - lam * c_i)`` over movable items."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    mov = inst.movable
    hinge = np.maximum(0.0, inst.omega[mov] - lam * inst.cost[mov])
    return lam * inst.capacity / inst.n + math.fsum(hinge) / inst.n


def dual_value(profile, data, spec, delta, q, lam, direction=UPWARD, constraint=0) -> float:
    return dual_value_instance(build_instance(profile, data, spec, direction, delta, q, constraint), lam)


def threshold_from_instance(inst: KnapsackInstance) -> float:
    mov = inst.movable
    total = math.fsum(inst.cost[mov]) / inst.n
    return total ** (1.0 / inst.q)


def threshold_radius(profile, data, spec, direction=UPWARD, q=2.0, constraint=0) -> float:
    """Smallest radius at which every movable point fits in the budget (``lambda* = 0``)."""
    return threshold_from_instance(build_instance(profile, data, spec, direction, 0.0, q, constraint))


@dataclass
class ConjugateCheck:
    passed: bool
    s: float
    sup_value: float  # sup_t Psi(t) - t s, i.e. minus the conjugate at s
    target: float  # delta^q

    @property
    def conjugate(self) -> float:
        return -self.sup_value


def conjugate_side(inst: KnapsackInstance, shift: float, epsilon: float) -> ConjugateCheck:
    """Check ``sup_{t>0} Psi(t) - t s >= delta^q`` with ``Psi(t) = mean(min(c_i, t w_i))``.

    ``s = M + shift - epsilon`` where ``M`` is the movable mass; ``shift`` is
    ``F`` for the upward side and ``-F`` for the downward side.
    """
    mov = inst.movable
    n = inst.n
    om, c = inst.omega[mov], inst.cost[mov]
    mass = math.fsum(om) / n
    s = mass + shift - epsilon
    target = inst.capacity / n
    # S <= M, so s <= TOL already gives S + shift <= epsilon + TOL
    if s <= TOL:
        return ConjugateCheck(True, s, math.inf, target)
    pos = c > 0
    if not pos.any():
        return ConjugateCheck(False, s, -math.inf, target)
    bps = np.unique(c[pos] / om[pos])
    ts = np.concatenate([[bps[0] / 2], bps, [2 * bps[-1]]])
    vals = np.array([math.fsum(np.minimum(c, t * om)) / n - t * s for t in ts])
    best = float(vals.max())
    return ConjugateCheck(best >= target - TOL, s, best, target)


def conjugate_certify(profile, data, spec, delta, q, epsilon, constraint=0) -> bool:
    """Verdict from the concave conjugates of both sides."""
    return conjugate_report(profile, data, spec, delta, q, epsilon, constraint)["passed"]


def conjugate_report(profile, data, spec, delta, q, epsilon, constraint=0) -> dict:
    from .data import fairness_from_predictions

    F = float(fairness_from_predictions(data, spec, profile.predictions)[constraint])
    up = build_instance(profile, data, spec, UPWARD, delta, q, constraint)
    down = build_instance(profile, data, spec, DOWNWARD, delta, q, constraint)
    cs = conjugate_side(up, F, epsilon)
    ci = conjugate_side(down, -F, epsilon)
    return {"passed": cs.passed and ci.passed, "upward": cs, "downward": ci}


# ----------------------------------------------------------------------------
# sweeps over delta
# ----------------------------------------------------------------------------
def regularizer_curve(inst: KnapsackInstance, deltas) -> np.ndarray:
    """Knapsack value at every radius in ``deltas`` with one sort."""
    deltas = np.asarray(deltas, dtype=np.float64)
    n = inst.n
    omega, cost = inst.omega, inst.cost
    free_mass = math.fsum(omega[(omega > 0) & (cost == 0)]) / n
    if np.isinf(inst.q):
        mov = inst.movable & (cost > 0)
        d = np.sort(cost[mov])
        w = omega[mov][np.argsort(cost[mov], kind="stable")]
        cw = np.concatenate([[0.0], np.cumsum(w)])
        k = np.searchsorted(d, deltas, side="right")
        return free_mass + cw[k] / n
    order, _ = _greedy_order(omega, cost)
    c = cost[order]
    w = omega[order]
    cc = np.concatenate([[0.0], np.cumsum(c)])
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cap = n * deltas ** inst.q
    k = np.searchsorted(cc, cap, side="right") - 1  # items fully taken
    k = np.clip(k, 0, len(c))
    out = cw[k].copy()
    part = k < len(c)
    kk = k[part]
    out[part] += w[kk] * np.clip((cap[part] - cc[kk]) / c[kk], 0.0, 1.0)
    return free_mass + out / n


# ----------------------------------------------------------------------------
# certificate
# ----------------------------------------------------------------------------
@dataclass
class ConstraintAudit:
    fairness: float
    s_reg: RegularizerResult
    i_reg: RegularizerResult
    delta_s: float | None
    delta_i: float | None
    band_bound: float | None = None

    @property
    def upper(self) -> float:
        return self.s_reg.value + self.fairness

    @property
    def lower(self) -> float:
        return self.i_reg.value - self.fairness

    def condition(self) -> float:
        return max(self.upper, self.lower)


@dataclass
class Certificate:
    audits: list
    epsilon: float
    delta: float
    q: float
    metric: str
    n: int
    method: str
    calibration: dict | None = None
    standardization: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def fairness(self) -> np.ndarray:
        return np.array([a.fairness for a in self.audits])

    @property
    def s_reg(self):
        return [a.s_reg for a in self.audits]

    @property
    def i_reg(self):
        return [a.i_reg for a in self.audits]

    @property
    def condition(self) -> float:
        return max(a.condition() for a in self.audits)

    @property
    def worst_case(self) -> np.ndarray:
        """``F + S`` per constraint (worst-case upward disparity)."""
        return np.array([a.upper for a in self.audits])

    @property
    def passed(self) -> bool:
        return all(a.upper <= self.epsilon + TOL and a.lower <= self.epsilon + TOL for a in self.audits)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        cons = []
        for i, a in enumerate(self.audits):
            cons.append({
                "constraint": i,
                "fairness": a.fairness,
                "S": a.s_reg.summary(),
                "I": a.i_reg.summary(),
                "S_plus_F": a.upper,
                "I_minus_F": a.lower,
                "delta_S": a.delta_s,
                "delta_I": a.delta_i,
                "band_bound": a.band_bound,
            })
        out = {
            "inputs": {"delta": self.delta, "q": _num(self.q), "epsilon": self.epsilon, "metric": self.metric,
                       "n": self.n, "distance_method": self.method},
            "constraints": cons,
            "condition": self.condition,
            "verdict": self.verdict,
            "calibration": self.calibration,
            "standardization": self.standardization,
        }
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        head = ["constraint", "fairness", "S", "I", "lambda_S", "lambda_I", "S_plus_F", "I_minus_F",
                "delta_S", "delta_I", "epsilon", "delta", "q", "verdict"]
        rows = [",".join(head)]
        for i, a in enumerate(self.audits):
            vals = [i, a.fairness, a.s_reg.value, a.i_reg.value, a.s_reg.lambda_star, a.i_reg.lambda_star,
                    a.upper, a.lower, a.delta_s, a.delta_i, self.epsilon, self.delta, _num(self.q), self.verdict]
            rows.append(",".join("" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(v)
                                 if isinstance(v, float) else str(v) for v in vals))
        return "\n".join(rows) + "\n"


def _num(q):
    return "inf" if np.isinf(q) else float(q)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings or null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def audit_profile(profile: DistanceProfile, data: Dataset, spec: FairnessSpec, delta: float, q: float,
                  backend=None) -> list:
    """Per-constraint audits from a precomputed distance profile."""
    from .data import fairness_from_predictions

    F = fairness_from_predictions(data, spec, profile.predictions)
    audits = []
    for i in range(spec.m):
        s = regularizer(profile, data, spec, delta, q, UPWARD, i, backend)
        r = regularizer(profile, data, spec, delta, q, DOWNWARD, i, backend)
        if np.isinf(q):
            ds = di = None
            bb = band_bound(profile, data, spec, delta, F[i], i)
        else:
            ds = threshold_radius(profile, data, spec, UPWARD, q, i)
            di = threshold_radius(profile, data, spec, DOWNWARD, q, i)
            bb = None
        audits.append(ConstraintAudit(float(F[i]), s, r, ds, di, bb))
    return audits


def certify(data: Dataset, spec: FairnessSpec, model, delta: float, q: float = 2.0, profile=None,
            method: str = "auto", calibration: dict | None = None, backend=None, **profile_kw) -> Certificate:
    """Audit a model: fairness, both regularizers and the pass/fail verdict."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    group_stats(data, spec).require_positive()
    if profile is None:
        if np.isinf(q):
            # the band only needs distances; use the Euclidean ground norm unless told otherwise
            pq = profile_kw.pop("norm", 2.0)
            profile = distance_profile(data, model, pq, method=method, **profile_kw)
        else:
            profile = distance_profile(data, model, q, method=method, **profile_kw)
    audits = audit_profile(profile, data, spec, delta, q, backend)
    return Certificate(audits, spec.epsilon, float(delta), q, spec.name, data.n, profile.method, calibration,
                       data.standardization)
