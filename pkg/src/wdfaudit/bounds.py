"""Analytic margin bounds and finite-sample radius calibration.

Naming: for a group ``j`` the *movable* distances of the upward regularizer
are ``d_plus`` on ``S_j`` points predicted 0 (``j = 0``) and ``d_minus`` on
``S_j`` points predicted 1 (``j = 1``).  Margins are the infima of those
distance distributions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm as _normal

from .data import Dataset, FairnessSpec, encode_matrix, group_stats, make_spec
from .distance import profile as distance_profile
from .errors import NotApplicableError, OutOfRegimeError
from .models import ScoreModel, dual_exponent, lp_norm


# ----------------------------------------------------------------------------
# Gaussian closed forms
# ----------------------------------------------------------------------------
@dataclass(frozen=True)
class GaussianG:
    """Distance laws of a Gaussian feature vector against a hyperplane.

    The signed distance ``t = (w.x + b) / ||w||_{q*}`` is ``N(m, sigma^2)``.
    ``G_minus`` is the law of ``d_minus = t`` on ``{t > 0}`` and ``G_plus``
    the law of ``d_plus = -t`` on ``{t < 0}``, each conditioned on its side.
    """

    m: float
    sigma: float

    @property
    def mass_plus(self) -> float:
        """Probability of the positive side."""
        return float(_normal.sf(-self.m / self.sigma))

    @property
    def mass_minus(self) -> float:
        return float(_normal.cdf(-self.m / self.sigma))

    def G_minus(self, s):
        s = np.maximum(np.asarray(s, dtype=np.float64), 0.0)
        z0 = -self.m / self.sigma
        return (_normal.cdf((s - self.m) / self.sigma) - _normal.cdf(z0)) / _normal.sf(z0)

    def G_plus(self, s):
        s = np.maximum(np.asarray(s, dtype=np.float64), 0.0)
        z0 = -self.m / self.sigma
        return (_normal.cdf(z0) - _normal.cdf((-s - self.m) / self.sigma)) / _normal.cdf(z0)

    def g_minus(self, s):
        s = np.asarray(s, dtype=np.float64)
        dens = _normal.pdf((s - self.m) / self.sigma) / self.sigma / _normal.sf(-self.m / self.sigma)
        return np.where(s >= 0, dens, 0.0)

    def g_plus(self, s):
        s = np.asarray(s, dtype=np.float64)
        dens = _normal.pdf((-s - self.m) / self.sigma) / self.sigma / _normal.cdf(-self.m / self.sigma)
        return np.where(s >= 0, dens, 0.0)


def gaussian_g(mean, covariance, w, b: float = 0.0, q: float = 2.0) -> GaussianG:
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    wn = lp_norm(w, dual_exponent(q))
    if wn <= 0:
        raise ValueError("w must be nonzero")
    var = float(w @ cov @ w) / wn ** 2
    if not var > 0:
        raise ValueError("degenerate variance along w")
    return GaussianG(float(w @ mean + b) / wn, math.sqrt(var))


# ----------------------------------------------------------------------------
# margins from data
# ----------------------------------------------------------------------------
@dataclass
class MarginSummary:
    s0_plus: float
    s1_minus: float
    s0_minus: float
    s1_plus: float
    g_at_margin: dict
    lipschitz: dict
    masses: dict
    bandwidth: float = 0.0

    @property
    def p0(self) -> float:
        return self.masses["p0"]

    @property
    def p1(self) -> float:
        return self.masses["p1"]


def _cdf_density(d: np.ndarray, s: float, h: float):
    """Forward-difference density and slope of the empirical CDF of ``d`` at ``s``."""
    if d.size == 0 or not np.isfinite(s):
        return 0.0, 0.0
    G = lambda t: np.count_nonzero(d <= t) / d.size  # noqa: E731
    g0 = (G(s + h) - G(s)) / h
    g1 = (G(s + 2 * h) - G(s + h)) / h
    return g0, abs(g1 - g0) / h


def _margin(d: np.ndarray, shrink: bool) -> float:
    d = np.sort(d[np.isfinite(d)])
    if d.size == 0:
        return math.inf
    if shrink and d.size >= 2:
        return max(0.0, 2 * d[0] - d[1])
    return float(d[0])


def estimate_margins(profile, data: Dataset, spec: FairnessSpec, constraint: int = 0, delta: float = 0.0,
                     shrink: bool = False, bandwidth: float | None = None) -> MarginSummary:
    """Plug-in margins, boundary densities and Lipschitz constants per group."""
    U = encode_matrix(data.sensitive, data.labels, spec)
    s0 = U[:, constraint].astype(bool)
    s1 = U[:, constraint + spec.m].astype(bool)
    pred = profile.predictions
    sets = {
        "s0_plus": profile.d_plus[s0 & (pred == 0)],
        "s1_minus": profile.d_minus[s1 & (pred == 1)],
        "s0_minus": profile.d_minus[s0 & (pred == 1)],
        "s1_plus": profile.d_plus[s1 & (pred == 0)],
    }
    margins = {k: _margin(v, shrink) for k, v in sets.items()}
    dist = profile.distance
    fin = dist[np.isfinite(dist)]
    span = float(fin.max() - fin.min()) if fin.size else 0.0
    h = bandwidth if bandwidth is not None else max(delta, 2 * span / math.sqrt(data.n))
    h = h if h > 0 else 1e-3
    dens, lips = {}, {}
    for k, v in sets.items():
        dens[k], lips[k] = _cdf_density(v[np.isfinite(v)], margins[k], h)
    stats = group_stats(data, spec)
    n0, n1 = max(int(s0.sum()), 1), max(int(s1.sum()), 1)
    masses = {
        "p0": float(stats.mu[constraint]),
        "p1": float(stats.mu[constraint + spec.m]),
        "P0_minus": sets["s0_plus"].size / n0,
        "P1_plus": sets["s1_minus"].size / n1,
        "P0_plus": sets["s0_minus"].size / n0,
        "P1_minus": sets["s1_plus"].size / n1,
    }
    return MarginSummary(margins["s0_plus"], margins["s1_minus"], margins["s0_minus"], margins["s1_plus"],
                         dens, lips, masses, h)


# ----------------------------------------------------------------------------
# margin bounds
# ----------------------------------------------------------------------------
@dataclass
class MarginBounds:
    lower_S: float
    upper_S: float
    lower_I: float
    upper_I: float


def _upper(delta, q, pa, sa, pb, sb):
    denom = min(pa * sa ** q, pb * sb ** q)
    return delta ** q / denom


def positive_margin_bounds(summary: MarginSummary, delta: float, q: float, lambda_star: float,
                           lambda_star_I: float | None = None) -> MarginBounds:
    """``lambda* delta^q <= S <= delta^q / min(p0 s0+^q, p1 s1-^q)`` and the mirror for ``I``.

    The downward bound pairs each group's mass with its own margin:
    ``min(p0 s0-^q, p1 s1+^q)``.  An empty movable set has margin ``inf``.
    """
    if not (summary.s0_plus > 0 and summary.s1_minus > 0):
        raise NotApplicableError("positive-margin bound needs s0_plus > 0 and s1_minus > 0")
    lam_i = lambda_star if lambda_star_I is None else lambda_star_I
    upper_S = _upper(delta, q, summary.p0, summary.s0_plus, summary.p1, summary.s1_minus)
    if summary.s0_minus > 0 and summary.s1_plus > 0:
        upper_I = _upper(delta, q, summary.p0, summary.s0_minus, summary.p1, summary.s1_plus)
    else:
        upper_I = math.inf
    return MarginBounds(lambda_star * delta ** q, upper_S, lam_i * delta ** q, upper_I)


def _lipschitz_denoms(summary: MarginSummary, q: float):
    p0, p1 = summary.p0, summary.p1
    A = min(p0 * summary.s0_plus ** q, p1 * summary.s1_minus ** q)
    B = min(
        p0 * summary.s0_plus ** (2 * q + 1) * summary.g_at_margin["s0_plus"] * summary.masses["P0_minus"],
        p1 * summary.s1_minus ** (2 * q + 1) * summary.g_at_margin["s1_minus"] * summary.masses["P1_plus"],
    )
    return A, B


def lipschitz_regime(summary: MarginSummary, q: float) -> float:
    """Default ``delta_0``: the radius where the two-term bound peaks."""
    A, B = _lipschitz_denoms(summary, q)
    if not (A > 0 and B > 0) or not math.isfinite(A):
        return 0.0
    return (B / (4 * q * A)) ** (1.0 / q)


def lipschitz_margin_lower_bound(summary: MarginSummary, delta: float, q: float,
                                 delta0: float | None = None) -> float:
    """``delta^q / A - 2 q delta^(2q) / B`` with ``A = min(p_j s_j^q)`` and
    ``B = min(p_j s_j^(2q+1) g_j(s_j) P_j(movable))``."""
    if not (summary.s0_plus > 0 and summary.s1_minus > 0):
        raise NotApplicableError("Lipschitz bound needs positive margins")
    A, B = _lipschitz_denoms(summary, q)
    if not B > 0:
        raise NotApplicableError("boundary densities must be positive")
    d0 = lipschitz_regime(summary, q) if delta0 is None else delta0
    if delta >= d0:
        raise OutOfRegimeError(f"delta={delta:g} is not below delta_0={d0:g}")
    return delta ** q / A - 2 * q * delta ** (2 * q) / B


@dataclass
class ZeroMarginBound:
    value: float
    leading: float
    correction: float
    exponent: float
    C: float
    zeta: float


def zero_margin_lower_bound(summary: MarginSummary, delta: float, q: float) -> ZeroMarginBound:
    """Two-term lower bound with leading order ``delta^(q/(q+1))``."""
    if summary.s0_plus > 0 or summary.s1_minus > 0:
        raise NotApplicableError("zero-margin bound needs s0_plus = s1_minus = 0")
    ms = summary.masses
    g0, g1 = summary.g_at_margin["s0_plus"], summary.g_at_margin["s1_minus"]
    p0, p1 = summary.p0, summary.p1
    A = ms["P0_minus"] * g0 * p0 ** (-1 / q) + ms["P1_plus"] * g1 * p1 ** (-1 / q)
    if not A > 0:
        raise NotApplicableError("boundary densities at 0 must be positive")
    L0, L1 = summary.lipschitz["s0_plus"], summary.lipschitz["s1_minus"]
    zeta = 2 ** ((2 - q) / q) * q / (q + 2) * (q + 1) ** (2 / (q + 1))
    C = zeta * (ms["P1_plus"] * L0 * p0 ** (-2 / q) + ms["P0_minus"] * L1 * p1 ** (-2 / q)) * A ** (-2 / (q + 1))
    e = q / (q + 1)
    leading = (q + 1) ** (1 / (q + 1)) * A ** e * delta ** e
    corr = C * delta ** (2 * e)
    return ZeroMarginBound(leading - corr, leading, corr, e, C, zeta)


# ----------------------------------------------------------------------------
# calibration
# ----------------------------------------------------------------------------
@dataclass
class CalibrationConstants:
    alpha: float
    beta: float
    L: float
    M: float
    c: float
    lambda0: float
    rho0: float
    sigma: float
    K: int
    D: float
    q: float = 2.0
    delta: float = 0.0

    @classmethod
    def from_estimates(cls, M, c, K, D, q, p0, p1, delta, rho0, lambda0=1.0, sigma=0.05):
        if not (0 < sigma < 1):
            raise ValueError("sigma must lie in (0, 1)")
        if delta <= 0 or lambda0 <= 0 or c <= 0:
            raise ValueError("delta, lambda0 and c must be positive")
        L = 2 * math.sqrt(math.pi) * D * q * M / c * max(1 / p0, 1 / p1) ** ((q + 1) / q) * math.sqrt(K)
        root = math.sqrt(2 * math.log(4 / sigma))
        alpha = 48 * (2 + 1 / lambda0) * (L / delta + 2 / lambda0 * root)
        beta = 96 * L / (delta * lambda0) + 48 / lambda0 * root
        return cls(alpha, beta, L, M, c, lambda0, rho0, sigma, int(K), D, q, delta)


def calibrated_delta(alpha: float, N: int, delta: float) -> float:
    return delta + alpha / math.sqrt(N)


def guarantee_threshold(constants: CalibrationConstants, delta: float) -> float:
    a, b, r = constants.alpha, constants.beta, constants.rho0
    first = 16 * (a + b) ** 2 / r ** 2 if r > 0 else math.inf
    return max(first, a ** 2 / delta ** 2) if delta > 0 else math.inf


def excess_threshold(constants: CalibrationConstants, delta: float) -> float:
    a, r = constants.alpha, constants.rho0
    if delta >= r / 4:
        raise OutOfRegimeError(f"excess bound needs delta < rho0/4 = {r / 4:g}")
    return max(16 * a ** 2 / r ** 2, a ** 2 / (r / 4 - delta) ** 2)


@dataclass
class CalibrationResult:
    delta_N: float
    min_N_guarantee: float
    min_N_excess: float | None
    guarantee_active: bool
    excess_active: bool
    excess_in_regime: bool

    def as_tuple(self):
        return self.delta_N, self.min_N_guarantee, self.min_N_excess


def calibrate_radius(constants: CalibrationConstants, N: int, delta: float) -> CalibrationResult:
    """Inflated radius ``delta + alpha/sqrt(N)`` and the sample sizes the guarantees need."""
    dN = calibrated_delta(constants.alpha, N, delta)
    g = guarantee_threshold(constants, delta)
    try:
        e = excess_threshold(constants, delta)
        in_regime = True
    except OutOfRegimeError:
        e, in_regime = None, False
    return CalibrationResult(dN, g, e, N > g, bool(in_regime and N > e), in_regime)


def concentration_radius(N: float, epsilon_conf: float, d: int, q: float, C: float = 1.0) -> float:
    """``(N ln(C / eps))^(-1 / max(d, 2q))``."""
    if N < 1 or not (0 < epsilon_conf < 1):
        raise ValueError("need N >= 1 and epsilon_conf in (0, 1)")
    inner = N * math.log(C / epsilon_conf)
    if inner <= 0:
        raise ValueError("C / epsilon_conf must exceed 1")
    return inner ** (-1.0 / max(d, 2 * q))


# ----------------------------------------------------------------------------
# plug-in estimates of the constants
# ----------------------------------------------------------------------------
def _default_spec(data, spec):
    if spec is not None:
        return spec
    return make_spec("dp", sorted(set(data.sensitive.tolist()))[:2])


def rho0_at(profile, data: Dataset, spec: FairnessSpec, q: float, constraint: int = 0) -> float:
    U = encode_matrix(data.sensitive, data.labels, spec)
    s0 = U[:, constraint].astype(bool)
    s1 = U[:, constraint + spec.m].astype(bool)
    pred = profile.predictions
    a = profile.d_plus[s0 & (pred == 0)] ** q
    b = profile.d_minus[s1 & (pred == 1)] ** q
    return math.fsum(a) / max(int(s0.sum()), 1) + math.fsum(b) / max(int(s1.sum()), 1)


@dataclass
class Rho0Estimate:
    at_theta: float
    inf_sampled: float
    samples: int


def sample_ball(center, radius: float, n: int, rng) -> np.ndarray:
    """Uniform draws from the Euclidean ball of the given radius around ``center``."""
    center = np.asarray(center, dtype=np.float64)
    k = center.shape[0]
    z = rng.standard_normal((n, k))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / k)
    return z * r[:, None]


def estimate_rho0(data: Dataset, model: ScoreModel, q: float = 2.0, spec: FairnessSpec | None = None,
                  constraint: int = 0, theta_samples: int = 0, seed: int = 0, profile=None,
                  method: str = "auto") -> Rho0Estimate:
    """Expected movable ``d^q`` at the audited parameters, plus a min over sampled parameters."""
    spec = _default_spec(data, spec)
    prof = profile if profile is not None else distance_profile(data, model, q, method=method)
    base = rho0_at(prof, data, spec, q, constraint)
    best = base
    if theta_samples > 0:
        rng = np.random.default_rng(seed)
        R = model.radius if model.radius else float(np.linalg.norm(model.params))
        for theta in sample_ball(np.zeros(len(model.params)), R, theta_samples, rng):
            alt = model.with_params(theta)
            try:
                pr = distance_profile(data, alt, q, method=method)
            except (ValueError, NotApplicableError):
                continue
            best = min(best, rho0_at(pr, data, spec, q, constraint))
    return Rho0Estimate(base, best, theta_samples)


def estimate_M(model: ScoreModel, X, q: float = 2.0, samples: int = 1000, seed: int = 0) -> float:
    """``max ||grad_theta g||_{q*}`` over sampled parameters in the R-ball and sample rows."""
    rng = np.random.default_rng(seed)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    K = len(model.params)
    R = model.radius if model.radius else float(np.linalg.norm(model.params))
    n_theta = max(1, int(math.sqrt(samples)))
    n_x = max(1, samples // n_theta)
    thetas = np.vstack([model.params[None, :], sample_ball(np.zeros(K), R, n_theta, rng)])
    rows = X[rng.integers(0, X.shape[0], n_x)]
    qs = dual_exponent(q)
    best = 0.0
    for th in thetas:
        G = model.with_params(th).grad_theta(rows)
        best = max(best, float(lp_norm(G, qs).max()))
    return best


def estimate_c(model: ScoreModel, profile, q: float = 2.0, samples: int = 1000) -> float:
    """``min ||grad_x g||_{q*}`` at boundary projections of the closest samples."""
    dist = profile.distance
    order = np.argsort(dist, kind="stable")
    order = order[np.isfinite(dist[order])][:samples]
    if order.size == 0:
        return math.nan
    if profile.projections is not None:
        P = np.asarray(profile.projections)[order]
        P = P[np.all(np.isfinite(P), axis=1)]
    else:
        P = np.empty((0, model.dim))
    if P.shape[0] == 0:
        raise NotApplicableError("no boundary projections available to estimate c")
    return float(lp_norm(model.grad_x(P), dual_exponent(q)).min())


def calibration_block(data: Dataset, spec: FairnessSpec, model: ScoreModel, profile, delta: float, q: float,
                      lambda0: float = 1.0, sigma: float = 0.05, samples: int = 1000, seed: int = 0,
                      constraint: int = 0) -> dict:
    """Constants, thresholds and ``delta_N``; labeled as conditional on ``lambda0``."""
    stats = group_stats(data, spec).require_positive()
    p0, p1 = float(stats.mu[constraint]), float(stats.mu[constraint + spec.m])
    qq = 2.0 if np.isinf(q) else q
    block: dict = {"conditional_on_lambda0": lambda0, "sigma": sigma, "samples": samples}
    try:
        M = estimate_M(model, data.features, qq, samples, seed)
        c = estimate_c(model, profile, qq, samples)
        rho = estimate_rho0(data, model, qq, spec, constraint, profile=profile)
        K = len(model.params)
        R = model.radius if model.radius else float(np.linalg.norm(model.params))
        const = CalibrationConstants.from_estimates(M, c, K, 2 * R, qq, p0, p1, delta, rho.at_theta, lambda0,
                                                    sigma)
        res = calibrate_radius(const, data.n, delta)
    except (ValueError, NotApplicableError, ZeroDivisionError) as exc:
        block["error"] = str(exc)
        return block
    block["constants"] = asdict(const)
    block.update(
        delta_N=res.delta_N,
        min_N_guarantee=res.min_N_guarantee,
        min_N_excess=res.min_N_excess,
        guarantee_active=res.guarantee_active,
        excess_active=res.excess_active,
        excess_in_regime=res.excess_in_regime,
    )
    return block
