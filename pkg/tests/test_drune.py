import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import golden_min, lp_vertex_optimum, random_toy, thm_infinity_fraction
from wdfaudit import kernels
from wdfaudit.data import Dataset, demographic_parity, empirical_fairness, make_spec
from wdfaudit.distance import DistanceProfile, profile
from wdfaudit.drune import (
    DOWNWARD,
    UPWARD,
    KnapsackInstance,
    band_bound,
    build_instance,
    certify,
    conjugate_certify,
    conjugate_report,
    dual_value,
    dual_value_instance,
    knapsack_solve,
    regularizer,
    regularizer_curve,
    regularizer_inf_norm_q_infty,
    threshold_from_instance,
    threshold_radius,
)
from wdfaudit.errors import GroupMassError
from wdfaudit.models import LinearScore


def four_points():
    """Hand-built profile: one point in each (group, side) cell."""
    data = Dataset(np.zeros((4, 1)), [0, 0, 1, 1], [0, 1, 1, 0])
    prof = DistanceProfile(
        d_plus=np.array([1.0, 0.0, 0.0, 3.0]),
        d_minus=np.array([0.0, 2.0, 0.5, 0.0]),
        predictions=np.array([0, 1, 1, 0]),
        q=2.0,
        method="given",
    )
    return data, prof


def random_instance(rng, n=None):
    n = int(rng.integers(1, 13)) if n is None else n
    omega = rng.choice([0.0, 1 / rng.uniform(0.2, 0.8), 1 / rng.uniform(0.2, 0.8)], size=n)
    cost = rng.uniform(0, 2, n) ** 2
    cost[rng.random(n) < 0.1] = 0.0
    cost[omega == 0] = np.inf
    return KnapsackInstance.from_arrays(omega, cost, rng.uniform(0, 1.5))


class TestBuildInstance:
    def test_case_table(self):
        data, prof = four_points()
        up = build_instance(prof, data, demographic_parity(), UPWARD, 1.0, 2.0)
        # p0 = p1 = 1/2: movable upward are (a=0, h=0) with d_plus and (a=1, h=1) with d_minus
        assert up.omega.tolist() == [2.0, 0.0, 2.0, 0.0]
        assert up.cost.tolist() == [1.0, np.inf, 0.25, np.inf]
        assert up.capacity == 4.0
        down = build_instance(prof, data, demographic_parity(), DOWNWARD, 1.0, 2.0)
        assert down.omega.tolist() == [0.0, 2.0, 0.0, 2.0]
        assert down.cost.tolist() == [np.inf, 4.0, np.inf, 9.0]

    def test_positive_point_in_s0_not_movable(self):
        data, prof = four_points()
        up = build_instance(prof, data, demographic_parity(), UPWARD, 1.0, 2.0)
        assert up.omega[1] == 0.0 and np.isinf(up.cost[1])

    def test_nothing_movable(self):
        data, prof = four_points()
        prof = DistanceProfile(np.zeros(4), np.zeros(4), np.array([1, 1, 0, 0]), 2.0, "given")
        for delta in (0.0, 0.5, 100.0):
            assert regularizer(prof, data, demographic_parity(), delta, 2.0).value == 0.0

    def test_empty_group(self):
        data = Dataset(np.zeros((2, 1)), [0, 0], [0, 1])
        prof = DistanceProfile(np.ones(2), np.zeros(2), np.zeros(2, int), 2.0, "given")
        with pytest.raises(GroupMassError):
            build_instance(prof, data, demographic_parity(), UPWARD, 1.0, 2.0)

    def test_unreachable_points_are_fixed(self):
        data, prof = four_points()
        prof.d_plus[0] = np.inf
        up = build_instance(prof, data, demographic_parity(), UPWARD, 1.0, 2.0)
        assert up.omega[0] == 0.0 and not up.movable[0]


class TestKnapsack:
    def test_worked_example(self):
        res = knapsack_solve(KnapsackInstance.from_arrays([2.0, 1.0], [1.0, 4.0], 1.0))
        assert res.xi.tolist() == [1.0, 0.25]
        assert res.value == 1.125
        assert res.lambda_star == 0.25
        assert res.fractional_index == 1
        assert res.t_star == 0.25

    def test_zero_capacity(self):
        res = knapsack_solve(KnapsackInstance.from_arrays([2.0, 1.0], [1.0, 4.0], 0.0))
        assert res.value == 0.0 and not res.xi.any()

    def test_free_items_taken_at_zero_budget(self):
        res = knapsack_solve(KnapsackInstance.from_arrays([2.0, 1.0, 3.0], [0.0, 4.0, 0.0], 0.0))
        assert res.xi.tolist() == [1.0, 0.0, 1.0]
        assert res.value == pytest.approx(5 / 3, abs=1e-15)

    def test_slack_capacity(self):
        res = knapsack_solve(KnapsackInstance.from_arrays([2.0, 1.0], [1.0, 4.0], 10.0))
        assert res.xi.tolist() == [1.0, 1.0]
        assert res.lambda_star == 0.0 and res.fractional_index is None

    def test_ties_by_index(self):
        res = knapsack_solve(KnapsackInstance.from_arrays([1.0, 1.0, 1.0], [1.0, 1.0, 1.0], 1 / 3 * 1.5))
        assert res.xi.tolist() == [1.0, 0.5, 0.0]

    def test_small_lp_examples(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            inst = random_instance(rng)
            res = knapsack_solve(inst)
            assert abs(res.value - lp_vertex_optimum(inst.omega, inst.cost, inst.capacity)) <= 1e-9

    @given(st.integers(0, 2**32 - 1))
    def test_matches_lp(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        res = knapsack_solve(inst)
        assert abs(res.value - lp_vertex_optimum(inst.omega, inst.cost, inst.capacity)) <= 1e-9

    @given(st.integers(0, 2**32 - 1))
    def test_structure(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        res = knapsack_solve(inst)
        assert np.all((res.xi >= 0) & (res.xi <= 1))
        assert np.count_nonzero((res.xi > 0) & (res.xi < 1)) <= 1
        fin = np.isfinite(inst.cost)
        assert math.fsum(res.xi[fin] * inst.cost[fin]) <= inst.capacity + 1e-9
        assert np.all(res.xi[~inst.movable] == 0)
        assert res.value == math.fsum(inst.omega * res.xi) / inst.n

    @given(st.integers(0, 2**32 - 1))
    def test_strong_duality(self, seed):
        inst = random_instance(np.random.default_rng(seed))
        res = knapsack_solve(inst)
        mov = inst.movable & (inst.cost > 0)
        hi = 2 * max([1.0] + list(inst.omega[mov] / inst.cost[mov]))
        best = golden_min(lambda lam: dual_value_instance(inst, lam), 0.0, hi)
        assert abs(best - res.value) <= 1e-6
        # the recovered multiplier attains the dual optimum
        assert abs(dual_value_instance(inst, res.lambda_star) - res.value) <= 1e-9

    @pytest.mark.skipif(not kernels.HAVE_CYTHON, reason="compiled kernels not built")
    def test_backends_agree(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            inst = random_instance(rng, n=200)
            a = knapsack_solve(inst, backend="cython")
            b = knapsack_solve(inst, backend="python")
            assert np.array_equal(a.xi, b.xi) and a.lambda_star == b.lambda_star


class TestDual:
    def test_zero_multiplier_is_full_mass(self):
        data, prof = four_points()
        v = dual_value(prof, data, demographic_parity(), 0.3, 2.0, 0.0)
        assert v == 1.0  # (2 + 2) / 4

    def test_large_multiplier_asymptote(self):
        data, prof = four_points()
        lam = 1e6
        v = dual_value(prof, data, demographic_parity(), 0.3, 2.0, lam)
        assert v == pytest.approx(lam * 0.09, rel=1e-12)

    def test_negative_multiplier(self):
        data, prof = four_points()
        with pytest.raises(ValueError):
            dual_value(prof, data, demographic_parity(), 0.3, 2.0, -1.0)


class TestInfinity:
    def test_band_example(self):
        data = Dataset(np.zeros((6, 1)), [0, 0, 0, 1, 1, 1], [0, 1, 0, 1, 0, 1])
        prof = DistanceProfile(np.array([0.5, 1.5, 2.0, 0.3, 0.3, 0.3]), np.zeros(6), np.zeros(6, int),
                               np.inf, "given")
        res = regularizer_inf_norm_q_infty(prof, data, demographic_parity(), 1.0)
        assert res.value == 1 / 3
        assert math.isnan(res.lambda_star)

    def test_empty_band(self):
        data, prof = four_points()
        assert regularizer_inf_norm_q_infty(prof, data, demographic_parity(), 0.1).value == 0.0

    def test_saturation(self):
        rng = np.random.default_rng(1)
        data, spec, model = random_toy(rng, n=40, metric="dp")
        prof = profile(data, model, 2.0)
        res = regularizer_inf_norm_q_infty(prof, data, spec, 1e9)
        pred = prof.predictions
        a = data.sensitive
        expect = np.mean(pred[a == 0] == 0) + np.mean(pred[a == 1] == 1)
        assert res.value == pytest.approx(expect, abs=1e-15)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_conditional_cdfs(self, seed):
        rng = np.random.default_rng(seed)
        data, spec, model = random_toy(rng)
        prof = profile(data, model, 2.0)
        delta = float(rng.uniform(0, 1.5))
        for k in range(spec.m):
            got = regularizer_inf_norm_q_infty(prof, data, spec, delta, UPWARD, k).value
            assert got == float(thm_infinity_fraction(prof, data, spec, delta, k))

    @given(st.integers(0, 2**32 - 1))
    def test_band_bound_dominates(self, seed):
        rng = np.random.default_rng(seed)
        data, spec, model = random_toy(rng)
        prof = profile(data, model, 2.0)
        delta = float(rng.uniform(0, 1.5))
        F = empirical_fairness(data, spec, model)
        for k in range(spec.m):
            S = regularizer_inf_norm_q_infty(prof, data, spec, delta, UPWARD, k).value
            assert F[k] + S <= band_bound(prof, data, spec, delta, F[k], k) + 1e-12


class TestThreshold:
    def test_equal_distances(self):
        c = 0.7
        data = Dataset(np.zeros((4, 1)), [0, 0, 1, 1], [0, 1, 1, 0])
        prof = DistanceProfile(np.array([c, 0, 0, 0]), np.array([0, 0, c, 0]), np.array([0, 1, 1, 0]), 2.0, "given")
        # two movable points out of four
        assert threshold_radius(prof, data, demographic_parity(), UPWARD, 2.0) == pytest.approx(
            c * 0.5 ** 0.5, rel=1e-15)

    def test_no_movable(self):
        data, _ = four_points()
        prof = DistanceProfile(np.zeros(4), np.zeros(4), np.array([1, 1, 0, 0]), 2.0, "given")
        spec = demographic_parity()
        assert threshold_radius(prof, data, spec, UPWARD, 2.0) == 0.0
        for delta in (0.0, 0.1, 1.0):
            assert regularizer(prof, data, spec, delta, 2.0).lambda_star == 0.0

    @given(st.integers(0, 2**32 - 1))
    def test_threshold_law(self, seed):
        rng = np.random.default_rng(seed)
        data, spec, model = random_toy(rng)
        prof = profile(data, model, 2.0)
        for direction in (UPWARD, DOWNWARD):
            inst = build_instance(prof, data, spec, direction, 0.0, 2.0)
            ds = threshold_from_instance(inst)
            for f in (0.25, 0.5, 0.9, 0.99, 1.01, 1.1, 2.0):
                delta = ds * f
                lam = regularizer(prof, data, spec, delta, 2.0, direction).lambda_star
                assert (lam == 0) == (delta >= ds)


class TestConjugate:
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    def test_agrees_with_certificate(self, seed, eps):
        rng = np.random.default_rng(seed)
        data, spec, model = random_toy(rng, metric="dp")
        prof = profile(data, model, 2.0)
        delta = float(rng.uniform(0, 1.0))
        spec = make_spec("dp", epsilon=eps)
        cert = certify(data, spec, model, delta, 2.0, profile=prof)
        assert conjugate_certify(prof, data, spec, delta, 2.0, eps) == cert.passed

    def test_epsilon_one_passes(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            data, spec, model = random_toy(rng, metric="dp")
            prof = profile(data, model, 2.0)
            rep = conjugate_report(prof, data, spec, float(rng.uniform(0, 3)), 2.0, 1.0)
            assert rep["passed"]
            assert rep["upward"].s <= 1e-12 and rep["downward"].s <= 1e-12

    def test_zero_radius(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            data, spec, model = random_toy(rng, metric="dp")
            prof = profile(data, model, 2.0)
            F = float(empirical_fairness(data, spec, model)[0])
            eps = float(rng.uniform(0, 0.5))
            assert conjugate_certify(prof, data, spec, 0.0, 2.0, eps) == (abs(F) <= eps)


class TestCurveAndMonotonicity:
    @given(st.integers(0, 2**32 - 1))
    def test_curve_matches_solver_and_is_monotone(self, seed):
        rng = np.random.default_rng(seed)
        data, spec, model = random_toy(rng)
        prof = profile(data, model, 2.0)
        inst = build_instance(prof, data, spec, UPWARD, 0.0, 2.0)
        deltas = np.sort(rng.uniform(0, 2, 12))
        curve = regularizer_curve(inst, deltas)
        for d, v in zip(deltas, curve):
            assert v == pytest.approx(regularizer(prof, data, spec, d, 2.0).value, abs=1e-12)
        assert np.all(np.diff(curve) >= -1e-15)
        assert curve[-1] <= math.fsum(inst.omega[inst.movable]) / inst.n + 1e-12

    def test_zero_radius_counts_zero_distance_items(self):
        data, prof = four_points()
        prof.d_plus[0] = 0.0
        assert regularizer(prof, data, demographic_parity(), 0.0, 2.0).value == 0.5

    @pytest.mark.parametrize("seed", range(10))
    def test_q_consistency(self, seed):
        rng = np.random.default_rng(100 + seed)
        data, spec, model = random_toy(rng, n=30, metric="dp")
        prof = profile(data, model, 2.0)
        dist = np.sort(prof.distance)
        k = len(dist) // 3
        delta = 0.5 * (dist[k] + dist[k + 1])
        target = regularizer_inf_norm_q_infty(prof, data, spec, delta).value
        errs = [abs(regularizer(prof, data, spec, delta, q).value - target) for q in (8, 16, 32, 64)]
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
        assert errs[-1] <= errs[0]


class TestCertify:
    def test_zero_radius_reduces_to_fairness(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            data, spec, model = random_toy(rng)
            eps = float(rng.uniform(0, 0.6))
            spec = make_spec(spec.name, epsilon=eps)
            F = empirical_fairness(data, spec, model)
            cert = certify(data, spec, model, 0.0, 2.0)
            assert cert.passed == bool(np.all(np.abs(F) <= eps))

    def test_fields_and_json(self):
        rng = np.random.default_rng(5)
        data, spec, model = random_toy(rng, n=30, metric="eodds")
        cert = certify(data, spec, model, 0.3, 2.0)
        assert len(cert.audits) == 2
        rec = json.loads(cert.to_json())
        assert rec["verdict"] in ("pass", "fail")
        assert rec["inputs"] == {"delta": 0.3, "q": 2.0, "epsilon": 0.0, "metric": "equalized-odds", "n": 30,
                                 "distance_method": "closed"}
        c0 = rec["constraints"][0]
        assert c0["S_plus_F"] == pytest.approx(c0["S"]["value"] + c0["fairness"])
        assert c0["delta_S"] is not None
        assert cert.to_json() == certify(data, spec, model, 0.3, 2.0).to_json()

    def test_infinity_json(self):
        rng = np.random.default_rng(6)
        data, spec, model = random_toy(rng, n=30, metric="dp")
        rec = json.loads(certify(data, spec, model, 0.3, np.inf).to_json())
        assert rec["inputs"]["q"] == "inf"
        assert rec["constraints"][0]["S"]["lambda_star"] is None
        assert rec["constraints"][0]["band_bound"] is not None

    def test_csv(self):
        rng = np.random.default_rng(7)
        data, spec, model = random_toy(rng, n=30, metric="dp")
        lines = certify(data, spec, model, 0.3, 2.0).to_csv().splitlines()
        assert lines[0].startswith("constraint,fairness,S,I") and len(lines) == 2

    def test_verdict_definition(self):
        rng = np.random.default_rng(8)
        data, spec, model = random_toy(rng, n=30, metric="eodds")
        cert = certify(data, spec, model, 0.2, 2.0)
        expect = all(a.s_reg.value + a.fairness <= 0 + 1e-12 and a.i_reg.value - a.fairness <= 1e-12
                     for a in cert.audits)
        assert cert.passed == expect

    def test_negative_radius(self):
        rng = np.random.default_rng(9)
        data, spec, model = random_toy(rng)
        with pytest.raises(ValueError):
            certify(data, spec, model, -0.1, 2.0)

    def test_one_sided_model(self):
        data = Dataset(np.array([[1.0], [2.0], [3.0], [4.0]]), [0, 1, 0, 1], [0, 1, 1, 0])
        cert = certify(data, demographic_parity(), LinearScore([1.0], 10.0), 0.5, 2.0)
        # every point is positive: only the a=1 points can move (down), at cost (x + 10)^2
        assert cert.audits[0].fairness == 0.0
        assert cert.audits[0].s_reg.value == pytest.approx(1 / 288, rel=1e-15)
        assert cert.audits[0].s_reg.xi.tolist() == [0.0, 1 / 144, 0.0, 0.0]
