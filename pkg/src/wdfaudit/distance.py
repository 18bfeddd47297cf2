"""Distances from samples to the decision boundary ``{x : g(x) = 0}``.

Three routes:

* closed form for linear scores (any ``q`` in ``[1, inf]``);
* Newton iterations on the KKT system of the ``l_q`` projection problem for
  smooth scores (``1 < q < inf``);
* fast sweeping on a Cartesian grid (Euclidean, ``d <= 3``).

A point predicted 0 gets ``d_plus`` (distance to the positive region) and a
point predicted 1 gets ``d_minus``; the other entry is 0.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, UnsupportedModelError
from .kernels import fast_sweep
from .models import LinearScore, ScoreModel, dual_exponent, lp_norm

log = logging.getLogger(__name__)

EPS_Y = 1e-6
EPS_G = 1e-6
K_MAX = 100
RESTARTS = 5
GRAD_FLOOR = 1e-8


@dataclass
class DistanceProfile:
    d_plus: np.ndarray
    d_minus: np.ndarray
    predictions: np.ndarray
    q: float
    method: str
    projections: np.ndarray | None = None
    converged: np.ndarray | None = None

    @property
    def distance(self) -> np.ndarray:
        """Unsigned distance of every point to the opposite region."""
        return np.where(self.predictions == 1, self.d_minus, self.d_plus)

    def to_frame(self):
        import pandas as pd

        frame = pd.DataFrame(
            {
                "index": np.arange(self.d_plus.shape[0]),
                "side": np.where(self.predictions == 1, "plus", "minus"),
                "distance": self.distance,
            }
        )
        if self.projections is not None:
            for j in range(self.projections.shape[1]):
                frame[f"proj_{j}"] = self.projections[:, j]
        return frame


def _route(dist, pred):
    dist = np.asarray(dist, dtype=np.float64)
    return np.where(pred == 0, dist, 0.0), np.where(pred == 1, dist, 0.0)


# ----------------------------------------------------------------------------
# closed form
# ----------------------------------------------------------------------------
def dist_linear(model: LinearScore, x, q: float):
    """``(d_plus, d_minus)`` for a hyperplane: ``|w.x + b| / ||w||_{q*}``."""
    w = model.w
    norm = lp_norm(w, dual_exponent(q))
    if norm <= 0:
        raise ValueError("zero weight vector has no decision boundary")
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    margin = X @ w + model.b
    dist = np.abs(margin) / norm
    d_plus = np.where(margin < 0, dist, 0.0)
    d_minus = np.where(margin > 0, dist, 0.0)
    if np.ndim(x) == 1:
        return float(d_plus[0]), float(d_minus[0])
    return d_plus, d_minus


def linear_direction(w, q: float) -> np.ndarray:
    """Unit-margin displacement ``v`` with ``w.v = 1`` and ``||v||_q = 1/||w||_{q*}``."""
    w = np.asarray(w, dtype=np.float64)
    if q == 1:
        k = int(np.argmax(np.abs(w)))
        v = np.zeros_like(w)
        v[k] = 1.0 / w[k]
        return v
    if np.isinf(q):
        return np.sign(w) / np.abs(w).sum()
    qs = dual_exponent(q)
    return np.sign(w) * np.abs(w) ** (qs - 1.0) / (np.abs(w) ** qs).sum()


def linear_projection(model: LinearScore, X, q: float) -> np.ndarray:
    """Closest boundary points under ``l_q`` for a hyperplane."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    margin = X @ model.w + model.b
    return X - margin[:, None] * linear_direction(model.w, q)[None, :]


# ----------------------------------------------------------------------------
# Newton-KKT projection
# ----------------------------------------------------------------------------
@dataclass
class NewtonKktState:
    y: np.ndarray
    lam: float
    residual_y: np.ndarray
    residual_g: float
    iterations: int
    converged: bool
    distance: float = np.inf
    restarts: int = 0
    notes: list = field(default_factory=list)


def _gq(v, q):
    return np.sign(v) * np.abs(v) ** (q - 1.0)


def _newton_batch(model, X, Y0, q, eps_y, eps_g, k_max):
    """Run the bordered Newton iteration on every row; returns arrays."""
    n, d = X.shape
    Y = Y0.copy()
    grad = model.grad_x(Y)
    gnorm2 = np.einsum("nd,nd->n", grad, grad)
    lam = -np.einsum("nd,nd->n", grad, _gq(X - Y, q)) / np.where(gnorm2 > 0, gnorm2, 1.0)
    active = np.ones(n, dtype=bool)
    converged = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=np.int64)
    step = np.full(n, np.inf)
    floor = 1e-14 * (1.0 + np.abs(X).max())
    # for q < 2 the map v -> G_q(v) has unbounded slope at 0 and plain Newton
    # cycles; iterate on u = G_q(v) instead, whose inverse G_{q*} is smooth
    dual = q < 2
    qs = dual_exponent(q)
    for _ in range(k_max):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        y, x, lm = Y[idx], X[idx], lam[idx]
        v = x - y
        gr = model.grad_x(y)
        rg = model.score(y)
        ry = _gq(v, q) + lm[:, None] * gr
        done = (step[idx] < eps_y) & (np.abs(rg) < eps_g)
        if done.any():
            converged[idx[done]] = True
            active[idx[done]] = False
        keep = ~done
        if not keep.any():
            continue
        idx, y, x, lm, v, gr, rg, ry = idx[keep], y[keep], x[keep], lm[keep], v[keep], gr[keep], rg[keep], ry[keep]
        H = model.hess_x(y)
        m = idx.size
        J = np.zeros((m, d + 1, d + 1))
        J[:, :d, d] = gr
        if dual:
            # unknowns (u, lam) with u = G_q(v), y = x - G_{q*}(u)
            u = _gq(v, q)
            Dv = (qs - 1.0) * np.abs(u) ** (qs - 2.0)
            J[:, :d, :d] = -lm[:, None, None] * H * Dv[:, None, :]
            J[:, np.arange(d), np.arange(d)] += 1.0
            J[:, d, :d] = -gr * Dv
        else:
            av = np.maximum(np.abs(v), floor)
            W = (q - 1.0) * av ** (q - 2.0)
            J[:, :d, :d] = lm[:, None, None] * H
            J[:, np.arange(d), np.arange(d)] -= W
            J[:, d, :d] = gr
        rhs = -np.concatenate([ry, rg[:, None]], axis=1)
        sol = np.full((m, d + 1), np.nan)
        try:
            sol = np.linalg.solve(J, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            for r in range(m):
                try:
                    sol[r] = np.linalg.solve(J[r], rhs[r])
                except np.linalg.LinAlgError:
                    pass
        bad = ~np.all(np.isfinite(sol), axis=1)
        if bad.any():
            failed[idx[bad]] = True
            active[idx[bad]] = False
        ok = ~bad
        # cap wild steps at the current scale of the problem
        if dual:
            du = sol[ok, :d]
            cap = 2.0 * np.linalg.norm(u[ok], axis=1) + 1.0
            norm_du = np.linalg.norm(du, axis=1)
            scale = np.minimum(1.0, cap / np.where(norm_du > 0, norm_du, 1.0))
            y_new = x[ok] - _gq(u[ok] + scale[:, None] * du, qs)
            norm_dy = np.linalg.norm(y_new - y[ok], axis=1)
            Y[idx[ok]] = y_new
            step[idx[ok]] = norm_dy
        else:
            dy = sol[ok, :d]
            cap = 2.0 * np.linalg.norm(v[ok], axis=1) + 1.0
            norm_dy = np.linalg.norm(dy, axis=1)
            scale = np.minimum(1.0, cap / np.where(norm_dy > 0, norm_dy, 1.0))
            Y[idx[ok]] = y[ok] + scale[:, None] * dy
            step[idx[ok]] = norm_dy * scale
        lam[idx[ok]] = lm[ok] + scale * sol[ok, d]
        iters[idx[ok]] += 1
    # rows that exhausted k_max get a final residual check
    left = np.flatnonzero(active)
    if left.size:
        rg = model.score(Y[left])
        ok = (step[left] < eps_y) & (np.abs(rg) < eps_g)
        converged[left[ok]] = True
    return Y, lam, converged, failed, iters


def _segment_lower_bound(model, x, y, q, samples=16):
    """``|g(x)| / sup ||grad g||_{q*}`` along the segment from x to y."""
    t = np.linspace(0.0, 1.0, samples)[:, None]
    pts = x[None, :] + t * (y - x)[None, :]
    sup = float(lp_norm(model.grad_x(pts), dual_exponent(q)).max())
    if sup <= 0:
        return 0.0
    return abs(float(model.score(x))) / sup


def _bisect_boundary(model, X, Z, iters=40):
    """Boundary points on segments X->Z (endpoints on opposite sides)."""
    lo, hi = X.copy(), Z.copy()
    s_lo = model.score(lo) >= 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s_mid = model.score(mid) >= 0
        same = s_mid == s_lo
        lo[same] = mid[same]
        hi[~same] = mid[~same]
    # choose the endpoint closer to g = 0
    return np.where(
        (np.abs(model.score(lo)) <= np.abs(model.score(hi)))[:, None], lo, hi
    )


def _linearized_init(model, X):
    g = model.score(X)
    gr = model.grad_x(X)
    n2 = np.einsum("nd,nd->n", gr, gr)
    ok = n2 > 1e-300
    Y0 = X.copy()
    Y0[ok] = X[ok] - (g[ok] / n2[ok])[:, None] * gr[ok]
    return Y0


def _check_newton_q(q):
    if q == 1:
        raise UnsupportedModelError("Newton-KKT needs q > 1 (the l_1 weight matrix is degenerate); use closed form or sweep")
    if np.isinf(q) or q < 1:
        raise UnsupportedModelError("Newton-KKT supports 1 < q < inf")


def newton_distances(model: ScoreModel, X, q: float = 2.0, eps_y=EPS_Y, eps_g=EPS_G, k_max=K_MAX,
                     restarts=RESTARTS, extra_inits=None, seed=0):
    """Batched projections; returns (distances, projections, converged flags).

    ``extra_inits`` is an optional list of ``(N, d)`` arrays of starting
    points tried in addition to the linearization and jittered restarts.
    The smallest valid distance wins; points with no valid candidate get
    ``inf``.
    """
    _check_newton_q(q)
    if not model.smooth:
        raise UnsupportedModelError(f"{model.kind} has no Hessian oracle")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    best = np.full(n, np.inf)
    proj = np.full((n, d), np.nan)
    conv = np.zeros(n, dtype=bool)
    g0 = model.score(X)
    on_boundary = g0 == 0
    best[on_boundary] = 0.0
    proj[on_boundary] = X[on_boundary]
    conv[on_boundary] = True

    rng = np.random.default_rng(seed)
    base = _linearized_init(model, X)
    step0 = np.linalg.norm(base - X, axis=1)
    inits = [base]
    for _ in range(max(0, restarts - 1)):
        jitter = rng.standard_normal((n, d)) * (0.5 * step0 + 1e-3)[:, None]
        inits.append(base + jitter)
    if extra_inits is not None:
        inits.extend(np.asarray(e, dtype=np.float64) for e in extra_inits)

    fallback = np.full(n, np.inf)
    fallback_y = np.full((n, d), np.nan)
    for Y0 in inits:
        Y, _, ok, _, _ = _newton_batch(model, X, Y0, q, eps_y, eps_g, k_max)
        gy = model.score(Y)
        dist = lp_norm(X - Y, q)
        on_b = np.abs(gy) < eps_g
        good = ok & on_b & np.isfinite(dist)
        # unconverged but on the boundary: usable with a warning
        loose = ~ok & on_b & np.isfinite(dist)
        for i in np.flatnonzero(good & (dist < best)):
            if dist[i] + 1e-9 * (1 + dist[i]) < _segment_lower_bound(model, X[i], Y[i], q):
                continue
            best[i], proj[i], conv[i] = dist[i], Y[i], True
        upd = loose & (dist < fallback)
        fallback[upd], fallback_y[upd] = dist[upd], Y[upd]
    use_fb = ~np.isfinite(best) & np.isfinite(fallback)
    if use_fb.any():
        warnings.warn(f"{int(use_fb.sum())} projection(s) hit K_max; using best boundary iterate", RuntimeWarning)
        best[use_fb], proj[use_fb] = fallback[use_fb], fallback_y[use_fb]
    missing = ~np.isfinite(best)
    if missing.any():
        log.info("%d point(s) have no reachable boundary", int(missing.sum()))
    return best, proj, conv


def newton_kkt_project(model: ScoreModel, x, q: float = 2.0, eps_y=EPS_Y, eps_g=EPS_G, k_max=K_MAX,
                       init=None, restarts=RESTARTS, max_retries=3, seed=0):
    """Project one point onto the boundary; returns ``(y, distance, state)``.

    Raises ``ConvergenceError`` if no start (including perturbed retries after
    singular Jacobians) reaches the boundary.
    """
    _check_newton_q(q)
    x = np.asarray(x, dtype=np.float64).ravel()
    X = x[None, :]
    if model.score(x) == 0:
        st = NewtonKktState(x.copy(), 0.0, np.zeros_like(x), 0.0, 0, True, 0.0)
        return x.copy(), 0.0, st
    rng = np.random.default_rng(seed)
    starts = [np.asarray(init, dtype=np.float64)[None, :]] if init is not None else [_linearized_init(model, X)]
    scale = float(np.linalg.norm(starts[0] - X)) + 1e-3
    for _ in range(max(0, restarts - 1)):
        starts.append(starts[0] + rng.standard_normal(X.shape) * 0.5 * scale)
    best = None
    n_restarts = 0
    for Y0 in starts:
        for attempt in range(max_retries + 1):
            Y, lam, ok, failed, it = _newton_batch(model, X, Y0, q, eps_y, eps_g, k_max)
            if not failed[0]:
                break
            n_restarts += 1
            Y0 = Y0 + rng.standard_normal(X.shape) * 1e-3 * scale
        if failed[0] or not ok[0]:
            continue
        y = Y[0]
        dist = float(lp_norm(x - y, q))
        if dist + 1e-9 * (1 + dist) < _segment_lower_bound(model, x, y, q):
            continue
        if best is None or dist < best.distance:
            gr = model.grad_x(y)
            ry = _gq(x - y, q) + lam[0] * gr
            best = NewtonKktState(y, float(lam[0]), ry, float(model.score(y)), int(it[0]), True, dist)
    if best is None:
        raise ConvergenceError("Newton-KKT projection did not converge from any start")
    best.restarts = n_restarts
    return best.y, best.distance, best


# ----------------------------------------------------------------------------
# fast sweeping
# ----------------------------------------------------------------------------
@dataclass
class SweepGrid:
    axes: list
    phi: np.ndarray  # signed: positive where g >= 0
    h: float
    iterations: int
    history: list = field(default_factory=list)

    def lookup(self, X) -> np.ndarray:
        """Signed distance at arbitrary points by multilinear interpolation."""
        from scipy.interpolate import RegularGridInterpolator

        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        phi = self.phi
        if not np.all(np.isfinite(phi)):
            phi = np.where(np.isfinite(phi), phi, np.sign(phi) * 1e300)
        interp = RegularGridInterpolator(tuple(self.axes), phi, method="linear", bounds_error=False, fill_value=None)
        vals = interp(X)
        if not np.all(np.isfinite(self.phi)):
            vals = np.where(np.abs(vals) > 1e299, np.sign(vals) * np.inf, vals)
        return vals


def _score_chunked(model, P, chunk=4096):
    out = np.empty(P.shape[0])
    for s in range(0, P.shape[0], chunk):
        out[s:s + chunk] = model.score(P[s:s + chunk])
    return out


def interface_distances(G: np.ndarray, h: float):
    """Initial distances at nodes adjacent to a sign change of ``G``.

    Along each axis the crossing is located by linear interpolation; the
    per-axis crossings are combined as the distance to a planar interface.
    Returns ``(phi0, frozen)``.
    """
    pos = G >= 0
    inv = np.zeros(G.shape)
    hit = np.zeros(G.shape, dtype=bool)
    zero = G == 0
    for axis in range(G.ndim):
        best = np.full(G.shape, np.inf)
        for shift in (1, -1):
            nb = np.roll(G, shift, axis=axis)
            nb_pos = nb >= 0
            valid = np.ones(G.shape, dtype=bool)
            edge = [slice(None)] * G.ndim
            edge[axis] = 0 if shift == 1 else -1
            valid[tuple(edge)] = False
            cross = valid & (nb_pos != pos)
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(cross, G / (G - nb), np.inf)
            best = np.minimum(best, np.abs(frac) * h)
        has = np.isfinite(best)
        hit |= has
        with np.errstate(divide="ignore"):
            inv = inv + np.where(has, 1.0 / np.maximum(best, 1e-300) ** 2, 0.0)
    phi0 = np.full(G.shape, np.inf)
    with np.errstate(divide="ignore"):
        phi0[hit] = 1.0 / np.sqrt(inv[hit])
    phi0[zero] = 0.0
    frozen = hit | zero
    return phi0, frozen


def fast_sweep_distance(model: ScoreModel, lower, upper, h: float, max_iter: int = K_MAX, tol: float = 1e-12,
                        backend=None, record_history: bool = False) -> SweepGrid:
    """Solve ``|grad phi| = 1`` with ``phi = 0`` on the boundary over a box."""
    lower = np.atleast_1d(np.asarray(lower, dtype=np.float64))
    upper = np.atleast_1d(np.asarray(upper, dtype=np.float64))
    d = lower.shape[0]
    if d > 3:
        raise UnsupportedModelError("fast sweeping is limited to d <= 3")
    if h <= 0:
        raise ValueError("grid spacing must be positive")
    if model.dim != d:
        raise ValueError("box dimension does not match the model")
    axes = [np.arange(lo, hi + 0.5 * h, h) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    P = np.stack([m.ravel() for m in mesh], axis=1)
    G = _score_chunked(model, P).reshape(mesh[0].shape)
    phi0, frozen = interface_distances(G, h)
    shape3 = G.shape + (1,) * (3 - d)
    phi = phi0.reshape(shape3).copy()
    fz = frozen.reshape(shape3)
    history = []
    if not frozen.any():
        iters = 0
    elif record_history:
        iters = 0
        for _ in range(max_iter):
            before = phi.copy()
            phi, _ = fast_sweep(phi, fz, h, 1, tol, backend)
            iters += 1
            history.append(phi.reshape(G.shape).copy())
            diff = np.where(np.isinf(before) & np.isfinite(phi), np.inf, before - phi)
            if np.nanmax(diff) < tol:
                break
    else:
        phi, iters = fast_sweep(phi, fz, h, max_iter, tol, backend)
    signed = np.where(G >= 0, 1.0, -1.0) * phi.reshape(G.shape)
    return SweepGrid(axes, signed, h, iters, history)


def sweep_distances(model, X, h=None, pad=None, backend=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    if h is None:
        h = float(span.max()) / (256 if X.shape[1] <= 2 else 64)
    if pad is None:
        pad = 0.1 * span + 2 * h
    grid = fast_sweep_distance(model, lo - pad, hi + pad, h, backend=backend)
    return np.abs(grid.lookup(X)), grid


# ----------------------------------------------------------------------------
# routing
# ----------------------------------------------------------------------------
def gradient_floor(model: ScoreModel, prof: "DistanceProfile", frac: float = 0.05) -> float:
    """Smallest ``||grad g||_{q*}`` at the projections of the closest points.

    An empirical stand-in for a boundary gradient bound, which cannot be
    certified for a trained model; ``inf`` when nothing was projected.
    """
    if prof.projections is None:
        return math.inf
    dist = prof.distance
    ok = np.flatnonzero(np.isfinite(dist) & np.all(np.isfinite(prof.projections), axis=1))
    if ok.size == 0:
        return math.inf
    k = max(1, int(math.ceil(frac * ok.size)))
    near = ok[np.argsort(dist[ok], kind="stable")[:k]]
    return float(lp_norm(model.grad_x(prof.projections[near]), dual_exponent(prof.q)).min())


def _opposite_inits(model, X, pred, k=3):
    """Boundary points found by bisection toward the nearest opposite-side samples."""
    from scipy.spatial import cKDTree

    inits = []
    pos, neg = X[pred == 1], X[pred == 0]
    if pos.shape[0] == 0 or neg.shape[0] == 0:
        return inits
    trees = {1: cKDTree(pos), 0: cKDTree(neg)}
    targets = np.empty((k,) + X.shape)
    for side, pool in ((0, pos), (1, neg)):
        mask = pred == side
        if not mask.any():
            continue
        kk = min(k, pool.shape[0])
        _, nn = trees[1 - side].query(X[mask], k=kk)
        nn = np.asarray(nn).reshape(mask.sum(), kk)
        for j in range(k):
            targets[j][mask] = pool[nn[:, min(j, kk - 1)]]
    for j in range(k):
        inits.append(_bisect_boundary(model, X, targets[j]))
    return inits


def profile(data, model: ScoreModel, q: float = 2.0, method: str = "auto", norm: float | None = None,
            eps_y=EPS_Y, eps_g=EPS_G, k_max=K_MAX, restarts=RESTARTS, sweep_h=None, seed=0,
            backend=None) -> DistanceProfile:
    """Per-point distances routed to ``d_plus`` / ``d_minus`` by predicted side.

    ``norm`` selects the ground ``l_p`` norm (defaults to ``q``).
    """
    X = getattr(data, "features", data)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    p = q if norm is None else norm
    pred = model.predict(X)
    n, d = X.shape
    if method == "auto":
        if isinstance(model, LinearScore):
            method = "closed"
        elif d <= 3 and n > 10_000 and p == 2:
            method = "sweep"
        else:
            method = "newton"
    proj = None
    conv = None
    if method == "closed":
        if not isinstance(model, LinearScore):
            raise UnsupportedModelError("closed-form distances need a linear score")
        d_plus, d_minus = dist_linear(model, X, p)
        proj = linear_projection(model, X, p)
        conv = np.ones(n, dtype=bool)
    elif method == "newton":
        dist, proj, conv = newton_distances(
            model, X, p, eps_y, eps_g, k_max, restarts, extra_inits=_opposite_inits(model, X, pred), seed=seed
        )
        d_plus, d_minus = _route(dist, pred)
    elif method == "sweep":
        if p != 2:
            raise UnsupportedModelError("fast sweeping computes Euclidean distances only (q = 2)")
        dist, _ = sweep_distances(model, X, h=sweep_h, backend=backend)
        d_plus, d_minus = _route(dist, pred)
    else:
        raise ValueError(f"unknown distance method {method!r}")
    prof = DistanceProfile(d_plus, d_minus, pred, p, method, proj, conv)
    if method == "newton":
        floor = gradient_floor(model, prof)
        if floor <= GRAD_FLOOR:
            warnings.warn(f"score gradient nearly vanishes on the boundary (min dual norm {floor:.2e}); "
                          "distances there are unreliable", RuntimeWarning)
    return prof
