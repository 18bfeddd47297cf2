"""Worst-case distributions attaining the regularizers.

Movable points with a ratio ``omega_i / d_i^q`` above the dual value are
moved across the boundary (interior); points whose ratio equals it form the
shell and move with probability ``t*``, the fraction that exhausts the budget.
The result is a discrete pushforward of the empirical law whose
(sensitive, label) marginal is unchanged.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .data import Dataset, FairnessSpec, encode_matrix, group_stats, phi
from .distance import DistanceProfile, linear_projection, newton_distances
from .drune import UPWARD, KnapsackInstance, build_instance, knapsack_solve
from .models import LinearScore, ScoreModel, lp_norm

TOL = 1e-9


@dataclass
class RegionFlags:
    movable: np.ndarray
    interior: np.ndarray
    shell: np.ndarray
    cost: np.ndarray
    lambda_star: float
    delta: float
    q: float
    direction: str = UPWARD

    @property
    def n(self) -> int:
        return self.movable.shape[0]


@dataclass
class TransportPlan:
    weight: np.ndarray  # probability that sample i is moved
    targets: np.ndarray | None  # boundary points (rows of non-moved samples unused)
    t_star: float
    lambda_star: float
    regions: RegionFlags
    budget: float  # (1/N) sum weight_i d_i^q, the recorded transport cost
    direction: str = UPWARD

    @property
    def moved(self) -> np.ndarray:
        return self.weight > 0

    @property
    def is_identity(self) -> bool:
        return not self.moved.any()


def regions_from_instance(inst: KnapsackInstance, lambda_star: float) -> RegionFlags:
    mov = inst.movable
    cost = inst.cost
    if np.isinf(inst.q):
        interior = mov & (cost <= inst.delta)
        shell = np.zeros_like(mov)
    elif lambda_star <= 0:
        interior = mov.copy()
        shell = np.zeros_like(mov)
    else:
        with np.errstate(divide="ignore"):
            ratio = np.where(mov, inst.omega / np.where(mov, cost, 1.0), 0.0)
        interior = mov & (ratio > lambda_star)
        shell = mov & (ratio == lambda_star)
    return RegionFlags(mov, interior, shell, np.where(mov, cost, np.inf), float(lambda_star), inst.delta, inst.q,
                       inst.direction)


def classify_regions(profile: DistanceProfile, data: Dataset, spec: FairnessSpec, lambda_star: float,
                     delta: float, q: float, direction: str = UPWARD, constraint: int = 0) -> RegionFlags:
    """Interior and shell membership for the movable points.

    With ``lambda* > 0`` a point in ``S_j`` is interior when
    ``d < (p_j lambda*)^(-1/q)`` and on the shell at equality; ``lambda* = 0``
    puts every movable point in the interior.  For ``q = inf`` membership
    is ``d <= delta``.
    """
    inst = build_instance(profile, data, spec, direction, delta, q, constraint)
    return regions_from_instance(inst, lambda_star)


def build_plan(regions: RegionFlags, profile: DistanceProfile | None = None, delta: float | None = None,
               q: float | None = None) -> TransportPlan:
    """Move the interior, split the shell so the budget is used exactly."""
    delta = regions.delta if delta is None else delta
    q = regions.q if q is None else q
    n = regions.n
    weight = regions.interior.astype(np.float64)
    t_star = 1.0
    if not np.isinf(q) and regions.lambda_star > 0 and regions.shell.any():
        cap = n * delta ** q
        inner = math.fsum(regions.cost[regions.interior])
        shell = math.fsum(regions.cost[regions.shell])
        t_star = (cap - inner) / shell
        if t_star < -TOL or t_star > 1 + TOL:
            warnings.warn(f"shell split {t_star:.3g} outside [0, 1]; clamped", RuntimeWarning)
        t_star = min(1.0, max(0.0, t_star))
        weight[regions.shell] = t_star
    if np.isinf(q):
        budget = float(np.max(regions.cost[weight > 0], initial=0.0))
    else:
        budget = math.fsum(weight[weight > 0] * regions.cost[weight > 0]) / n
    targets = None if profile is None or profile.projections is None else np.array(profile.projections)
    return TransportPlan(weight, targets, t_star, regions.lambda_star, regions, budget, regions.direction)


def plan_for(profile, data, spec, delta, q, direction=UPWARD, constraint=0):
    """Solve the knapsack and build the matching plan in one go."""
    inst = build_instance(profile, data, spec, direction, delta, q, constraint)
    lam = 0.0 if np.isinf(q) else knapsack_solve(inst).lambda_star
    return build_plan(regions_from_instance(inst, lam), profile, delta, q)


def _project(model, X, q):
    if isinstance(model, LinearScore):
        return linear_projection(model, X, q)
    _, Y, _ = newton_distances(model, X, q)
    return Y


def crossed_targets(plan: TransportPlan, data: Dataset, model: ScoreModel, q: float | None = None,
                    max_doublings: int = 80) -> np.ndarray:
    """Targets of the moved points, nudged just past the boundary so ``h`` flips."""
    X = data.features
    idx = np.flatnonzero(plan.moved)
    out = np.array(X, dtype=np.float64, copy=True)
    if idx.size == 0:
        return out
    norm = plan.regions.q if q is None else q
    if np.isinf(norm):
        norm = 2.0
    Y = plan.targets[idx] if plan.targets is not None else _project(model, X[idx], norm)
    Y = np.array(Y, dtype=np.float64)
    bad = ~np.all(np.isfinite(Y), axis=1)
    if bad.any():
        Y[bad] = _project(model, X[idx[bad]], norm)
    src_pos = model.predict(X[idx]) == 1
    want_pos = ~src_pos
    gr = model.grad_x(Y)
    n2 = np.einsum("nd,nd->n", gr, gr)
    step = np.where(n2 > 0, 1.0 / np.where(n2 > 0, n2, 1.0), 0.0)[:, None] * gr
    sign = np.where(want_pos, 1.0, -1.0)[:, None]
    eps = np.full(idx.size, 1e-12 * (1.0 + np.abs(Y).max()))
    # scores near zero depend on evaluation order; demand a clear crossing
    slack = 1e-11 * (1.0 + np.sqrt(n2) * (1.0 + np.abs(Y).max(axis=1)))
    cur = Y.copy()

    def crossed(P):
        return sign[:, 0] * model.score(P) > slack

    for _ in range(max_doublings):
        flipped = crossed(cur)
        if flipped.all():
            break
        todo = ~flipped
        eps[todo] *= 2.0
        cur[todo] = Y[todo] + sign[todo] * eps[todo, None] * step[todo]
    flipped = crossed(cur)
    if not flipped.all():
        warnings.warn(f"{int((~flipped).sum())} target(s) could not be pushed across the boundary", RuntimeWarning)
    out[idx] = cur
    return out


def pushforward_atoms(plan: TransportPlan, data: Dataset, model: ScoreModel):
    """Discrete worst-case law: ``(points, weights, source index)``."""
    n = data.n
    moved_pts = crossed_targets(plan, data, model)
    stay = 1.0 - plan.weight
    keep = stay > 0
    mv = plan.weight > 0
    pts = np.concatenate([data.features[keep], moved_pts[mv]])
    w = np.concatenate([stay[keep], plan.weight[mv]]) / n
    src = np.concatenate([np.flatnonzero(keep), np.flatnonzero(mv)])
    return pts, w, src


def pushforward_expectation(plan: TransportPlan, data: Dataset, spec: FairnessSpec, model: ScoreModel,
                            constraint: int = 0) -> float:
    """``E[f]`` under the pushforward, with group masses of the original sample."""
    stats = group_stats(data, spec).require_positive()
    U = encode_matrix(data.sensitive, data.labels, spec)
    phis = phi(U, np.broadcast_to(stats.mu, U.shape))[:, constraint]
    pts, w, src = pushforward_atoms(plan, data, model)
    h = model.predict(pts)
    return math.fsum(w * h * phis[src])


def atom_marginal(plan: TransportPlan, data: Dataset, model: ScoreModel | None = None) -> dict:
    """Exact (sensitive, label) masses of the pushforward, as fractions."""
    n = data.n
    out: dict = {}
    stay = plan.weight < 1.0
    mv = plan.weight > 0
    # same atom layout as pushforward_atoms, with weights kept rational
    atoms = [(i, 1 - Fraction(plan.weight[i])) for i in np.flatnonzero(stay)]
    atoms += [(i, Fraction(plan.weight[i])) for i in np.flatnonzero(mv)]
    for i, w in atoms:
        cell = (int(data.sensitive[i]), int(data.labels[i]))
        out[cell] = out.get(cell, Fraction(0)) + w / n
    return out


def empirical_marginal(data: Dataset) -> dict:
    out: dict = {}
    for a, y in zip(data.sensitive.tolist(), data.labels.tolist()):
        out[(a, y)] = out.get((a, y), Fraction(0)) + Fraction(1, data.n)
    return out


def displaced_cost(plan: TransportPlan, data: Dataset, model: ScoreModel, q: float | None = None) -> float:
    """Cost actually paid after nudging targets across the boundary."""
    q = plan.regions.q if q is None else q
    moved = crossed_targets(plan, data, model)
    norm = 2.0 if np.isinf(q) else q
    d = lp_norm(moved - data.features, norm)
    if np.isinf(q):
        return float(d[plan.moved].max(initial=0.0))
    return math.fsum(plan.weight * d ** q) / data.n


def worst_case_dataset(plan: TransportPlan, data: Dataset, model: ScoreModel):
    """Perturbed sample as a Dataset plus per-row weights (they sum to 1)."""
    pts, w, src = pushforward_atoms(plan, data, model)
    ds = Dataset(pts, data.sensitive[src], data.labels[src], data.feature_names, data.standardization)
    return ds, w, src
