import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ellipticrl.errors import InfeasibleError, InputError
from ellipticrl.oracle import oracle_solve
from ellipticrl.solver import (ExplicitNotApplicable, WorstCaseProblem, argmin_shift, solve,
                               solve_implicit, solve_l1_two_foci, solve_l2_two_foci,
                               solve_single_focus)
from ellipticrl.uncertainty import EllipticSetSpec, NormExponent, contains

from instances import random_set

V3 = np.array([1.0, 0.0, -1.0])


def dual_lower_bound(v, spec, w):
    """Weak-duality bound from any split ``w`` with ``sum(w) - v`` parallel to 1."""
    r = w.sum(axis=0) - v
    assert np.ptp(r) < 1e-9
    q = spec.q
    return float(np.sum(w * spec.foci) - spec.beta * max(np.linalg.norm(x, ord=q) for x in w))


class TestArgminShift:
    def test_mean_for_q2(self):
        assert argmin_shift(V3, 2.0).mu == pytest.approx(0.0)

    def test_midrange_for_qinf(self):
        assert argmin_shift([3.0, 1.0], math.inf).mu == pytest.approx(-2.0)

    def test_median_for_q1(self):
        assert argmin_shift([0.0, 0.0, 5.0], 1.0).mu == pytest.approx(0.0)

    @pytest.mark.parametrize("q", [1.0, 1.5, 2.0, 3.0, math.inf])
    def test_matches_grid_scan(self, q):
        v = np.array([0.3, -1.2, 2.0, 0.7])
        mu = argmin_shift(v, q).mu
        grid = np.linspace(-3, 3, 60001)
        vals = [np.linalg.norm(v + m, ord=q) for m in grid]
        assert np.linalg.norm(v + mu, ord=q) <= min(vals) + 1e-9

    def test_constant_is_degenerate(self):
        res = argmin_shift([2.0, 2.0, 2.0], 2.0)
        assert res.degenerate and res.mu == pytest.approx(-2.0)


class TestSingleFocus:
    def test_ball_example(self):
        sol = solve_single_focus(V3, np.zeros(3), 0.3, NormExponent(2))
        np.testing.assert_allclose(sol.u_star, [-0.21213203, 0.0, 0.21213203], atol=1e-8)
        assert sol.objective == pytest.approx(-0.3 * math.sqrt(2), abs=1e-12)

    def test_translated_example(self):
        u1 = np.array([0.1, -0.1, 0.0])
        sol = solve_single_focus(V3, u1, 0.3, NormExponent(2))
        np.testing.assert_allclose(sol.u_star, [-0.11213203, -0.1, 0.21213203], atol=1e-8)
        assert sol.objective == pytest.approx(0.1 - 0.3 * math.sqrt(2), abs=1e-12)

    def test_zero_radius(self):
        sol = solve_single_focus(np.array([0.3, 2.0, -1.0]), np.zeros(3), 0.0, NormExponent(1))
        assert sol.objective == 0.0 and not sol.u_star.any()

    def test_constant_v_returns_focus(self):
        u1 = np.array([0.1, -0.1, 0.0])
        sol = solve_single_focus(np.full(3, 4.0), u1, 0.2, NormExponent(2))
        assert sol.degenerate
        np.testing.assert_array_equal(sol.u_star, u1)

    def test_minimizes_not_maximizes(self):
        sol = solve_single_focus(V3, np.zeros(3), 0.3, NormExponent(1))
        assert sol.objective < 0


class TestL1TwoFoci:
    def test_coincident_foci(self):
        sol = solve_l1_two_foci(np.array([1.0, 0.0]), np.zeros(2), np.zeros(2), 0.1)
        np.testing.assert_allclose(sol.u_star, [-0.025, 0.025], atol=1e-15)
        assert sol.objective == pytest.approx(-0.025)
        assert sol.mu_star == pytest.approx(-0.5)
        assert sol.lambda_star == pytest.approx(0.25)

    def test_separated_foci(self):
        u1, u2 = np.array([0.02, -0.02]), np.array([-0.02, 0.02])
        sol = solve_l1_two_foci(np.array([1.0, 0.0]), u1, u2, 0.2)
        # exact optimum, cross-checked with the LP oracle below
        assert sol.objective == pytest.approx(-0.05, abs=1e-12)
        spec = EllipticSetSpec(np.vstack([u1, u2]), 0.2, 1)
        assert contains(spec, sol.u_star)
        assert oracle_solve(np.array([1.0, 0.0]), spec).objective == pytest.approx(-0.05, abs=1e-9)

    def test_ties_not_explicit(self):
        with pytest.raises(ExplicitNotApplicable):
            solve_l1_two_foci(np.array([1.0, 1.0, 0.0]), np.zeros(3), np.zeros(3), 0.1)

    def test_constant_v(self):
        sol = solve(np.full(3, 0.7), EllipticSetSpec(np.zeros((2, 3)), 0.1, 1))
        assert sol.objective == pytest.approx(0.0, abs=1e-15)

    def test_radius_precondition(self):
        with pytest.raises(InputError):
            solve_l1_two_foci(np.array([1.0, 0.0]), np.array([0.1, -0.1]), np.array([-0.1, 0.1]), 0.4)


class TestL2TwoFoci:
    def test_coincident_foci(self):
        sol = solve_l2_two_foci(V3, np.zeros(3), np.zeros(3), 0.2)
        np.testing.assert_allclose(sol.u_star, [-0.07071068, 0.0, 0.07071068], atol=1e-8)
        assert sol.objective == pytest.approx(-0.1 * math.sqrt(2), abs=1e-12)
        assert sol.mu_star == pytest.approx(0.0, abs=1e-15)

    def test_translation(self):
        c = np.array([0.05, 0.02, -0.07])
        sol = solve_l2_two_foci(V3, c, c, 0.2)
        assert sol.objective == pytest.approx(V3 @ c - 0.1 * math.sqrt(2), abs=1e-12)

    def test_saturates_constraint(self, rng):
        u1 = rng.normal(scale=0.05, size=4)
        u2 = rng.normal(scale=0.05, size=4)
        u1 -= u1.mean()
        u2 -= u2.mean()
        beta = np.linalg.norm(u1 - u2) + 0.1
        sol = solve_l2_two_foci(rng.normal(size=4), u1, u2, beta)
        total = np.linalg.norm(sol.u_star - u1) + np.linalg.norm(sol.u_star - u2)
        assert total == pytest.approx(beta, abs=1e-10)

    def test_constant_v_returns_midpoint(self):
        u1, u2 = np.array([0.1, -0.1, 0.0]), np.array([0.0, 0.1, -0.1])
        sol = solve_l2_two_foci(np.ones(3), u1, u2, 0.5)
        assert sol.degenerate
        np.testing.assert_allclose(sol.u_star, 0.5 * (u1 + u2))


class TestDispatcher:
    def test_routes(self):
        assert solve(V3, EllipticSetSpec(np.zeros((1, 3)), 0.1, 2)).method == "explicit_n1"
        assert solve(V3, EllipticSetSpec(np.zeros((2, 3)), 0.1, 1)).method == "explicit_l1_n2"
        assert solve(V3, EllipticSetSpec(np.zeros((2, 3)), 0.1, 2)).method == "explicit_l2_n2"
        tied = np.array([1.0, 1.0, 0.0])
        assert solve(tied, EllipticSetSpec(np.zeros((2, 3)), 0.1, 1)).method == "implicit_dual"
        assert solve(V3, EllipticSetSpec(np.zeros((4, 3)), 0.1, math.inf)).method == "implicit_dual"

    def test_problem_object(self):
        prob = WorstCaseProblem.from_dict({"v": [1, 0, -1], "spec": {
            "dim": 3, "p": 2, "beta": 0.3, "foci": [[0, 0, 0]]}})
        assert solve(prob).objective == pytest.approx(-0.3 * math.sqrt(2))

    def test_method_names(self):
        spec = EllipticSetSpec(np.zeros((1, 3)), 0.3, 2)
        for method, tag in [("implicit", "implicit_dual"), ("oracle", "oracle")]:
            sol = solve(V3, spec, method=method)
            assert sol.method == tag
            assert sol.objective == pytest.approx(-0.3 * math.sqrt(2), abs=1e-6)
        with pytest.raises(InputError):
            solve(V3, spec, method="nope")

    def test_explicit_request_without_closed_form_raises(self):
        spec = EllipticSetSpec(np.zeros((3, 3)), 0.3, 2)
        with pytest.raises(ExplicitNotApplicable):
            solve(V3, spec, method="explicit")

    @pytest.mark.parametrize("method", ["auto", "implicit", "oracle"])
    def test_infeasible(self, method):
        spec = EllipticSetSpec([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 0.1, 1)
        with pytest.raises(InfeasibleError):
            solve(V3, spec, method=method)

    def test_solution_dict_fields(self):
        d = solve(V3, EllipticSetSpec(np.zeros((1, 3)), 0.3, 2)).to_dict()
        assert set(d) >= {"u_star", "mu_star", "lambda_star", "objective", "method"}


class TestImplicit:
    def test_three_foci_against_oracle(self, rng):
        spec = random_set(rng, d=4, n_foci=3, p=2.0)
        v = rng.normal(size=4)
        sol = solve_implicit(v, spec)
        ref = oracle_solve(v, spec)
        assert abs(sol.objective - ref.objective) <= max(1e-6, ref.gap)

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.0, math.inf])
    def test_certificate(self, rng, p):
        spec = random_set(rng, d=5, n_foci=2, p=p)
        v = rng.normal(size=5)
        sol = solve_implicit(v, spec, tol=1e-9)
        lb = dual_lower_bound(v, spec, sol.focus_duals)
        assert lb <= sol.objective + 1e-12
        assert sol.objective - lb <= 1e-9 * max(1.0, abs(sol.objective)) + 1e-12
        assert contains(spec, sol.u_star, 1e-9)
        assert abs(sol.u_star.sum()) <= 1e-10

    def test_generic_p_single_focus(self, rng):
        spec = random_set(rng, d=4, n_foci=1, p=3.0)
        v = rng.normal(size=4)
        exp = solve(v, spec)
        imp = solve_implicit(v, spec)
        assert exp.method == "explicit_n1"
        assert abs(exp.objective - imp.objective) <= 1e-7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_translation_equivariance(seed):
    rng = np.random.default_rng(seed)
    spec = random_set(rng, d=4)
    v = rng.normal(size=4)
    c = rng.normal(scale=0.1, size=4)
    c -= c.mean()
    moved = EllipticSetSpec(spec.foci + c, spec.beta, spec.p)
    a, b = solve(v, spec), solve(v, moved)
    assert b.objective == pytest.approx(a.objective + v @ c, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_scale_covariance(seed, t):
    rng = np.random.default_rng(seed)
    spec = random_set(rng, d=4)
    v = rng.normal(size=4)
    a, b = solve(v, spec), solve(t * v, spec)
    # each objective is certified only to its own absolute duality gap
    assert abs(b.objective - t * a.objective) <= b.gap + t * a.gap + 1e-12 * (1 + abs(b.objective))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.0, 0.3))
def test_beta_monotone(seed, extra):
    rng = np.random.default_rng(seed)
    spec = random_set(rng, d=4)
    v = rng.normal(size=4)
    a = solve(v, spec)
    b = solve(v, spec.with_beta(spec.beta + extra))
    assert b.objective <= a.objective + 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_output_is_feasible_and_optimal_against_samples(seed):
    rng = np.random.default_rng(seed)
    spec = random_set(rng)
    v = rng.normal(size=spec.dim)
    sol = solve(v, spec)
    assert contains(spec, sol.u_star, 1e-6)
    assert abs(sol.u_star.sum()) <= 1e-8
    assert sol.objective == pytest.approx(v @ sol.u_star, abs=1e-12)
    # random feasible points never beat the solver
    for _ in range(50):
        w = 0.5 * (sol.u_star + spec.foci[int(rng.integers(spec.n_foci))])
        w = w + rng.normal(scale=0.02, size=spec.dim)
        w -= w.mean()
        if contains(spec, w, 0.0):
            assert v @ w >= sol.objective - 1e-9
