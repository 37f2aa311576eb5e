"""Tests for the exact and entropic OT solvers.

The exact solver is checked against an independent n!-permutation brute force
on uniform equal-size instances, plus hand-derived values, dual feasibility,
complementary slackness, and scale equivariance.
"""

from __future__ import annotations

import numpy as np
import pytest

from conftest import brute_force_uniform_ot
from otbounds.errors import ConvergenceError, DimensionError, NonFiniteInput
from otbounds.solvers import (
    DualPotentials,
    KernelConfig,
    SolverKind,
    TransportPlan,
    evaluate_plan,
    kernel_cost,
    sinkhorn_divergence,
    solve_exact,
    solve_sinkhorn,
)


def _uniform(n):
    return np.full(n, 1.0 / n)


class TestTransportPlan:
    def test_marginal_validation(self):
        with pytest.raises(ValueError):
            TransportPlan(np.eye(2), np.array([0.5, 0.5]), np.array([0.9, 0.1]))

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            TransportPlan(np.array([[-0.5, 1.0], [1.0, -0.5]]) / 1.0, _uniform(2), _uniform(2))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            TransportPlan(np.eye(3) / 3, _uniform(2), _uniform(2))


class TestSolveExactBasics:
    def test_zero_cost_diagonal(self):
        """C=[[0,1],[1,0]] uniform: value 0, plan = I/2."""
        sol = solve_exact(np.array([[0.0, 1.0], [1.0, 0.0]]), _uniform(2), _uniform(2))
        assert sol.value == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(sol.plan.entries, np.eye(2) / 2)

    def test_two_by_two_permutation_optimum(self):
        """C=[[0,2],[3,1]] uniform: min over the two permutations is 0.5."""
        sol = solve_exact(np.array([[0.0, 2.0], [3.0, 1.0]]), _uniform(2), _uniform(2))
        assert sol.value == pytest.approx(0.5, abs=1e-12)

    def test_single_point(self):
        sol = solve_exact(np.array([[7.25]]), np.array([1.0]), np.array([1.0]))
        assert sol.value == pytest.approx(7.25)
        assert np.allclose(sol.plan.entries, [[1.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            solve_exact(np.zeros((2, 3)), _uniform(2), _uniform(2))

    def test_non_finite_cost(self):
        with pytest.raises(NonFiniteInput):
            solve_exact(np.array([[np.inf, 0.0], [0.0, 1.0]]), _uniform(2), _uniform(2))

    def test_solver_kind_and_duals_marked_exact(self):
        sol = solve_exact(np.array([[0.0, 2.0], [3.0, 1.0]]), _uniform(2), _uniform(2))
        assert sol.solver_kind is SolverKind.EXACT
        assert sol.duals.exact


class TestSolveExactOracle:
    def test_permutation_brute_force_50_instances(self):
        """Uniform n=m<=6 optimum equals the n! brute force within 1e-9."""
        rng = np.random.default_rng(42)
        for trial in range(50):
            n = int(rng.integers(2, 7))
            C = rng.uniform(0, 10, size=(n, n))
            sol = solve_exact(C, _uniform(n), _uniform(n))
            assert sol.value == pytest.approx(brute_force_uniform_ot(C), abs=1e-9), (
                f"trial {trial}"
            )

    def test_nonuniform_marginals_lp_route(self):
        """General marginals agree with a tiny transport computed by hand.

        a=(0.7,0.3), b=(0.4,0.6), C=[[0,1],[1,0]]: ship 0.4 to col 0 and 0.3
        to col 1 from row 0 (cost 0.3), row 1 fills col 1 (cost 0).
        """
        sol = solve_exact(
            np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([0.7, 0.3]), np.array([0.4, 0.6])
        )
        assert sol.value == pytest.approx(0.3, abs=1e-12)

    def test_rectangular_problem(self):
        """n != m forces the LP route; check against direct reasoning.

        One row must split mass across both columns; cheapest split puts
        0.5 on each zero-cost edge plus 0 extra.
        """
        C = np.array([[0.0, 5.0], [5.0, 0.0], [1.0, 1.0]])
        a = np.array([0.5, 0.4, 0.1])
        b = np.array([0.5, 0.5])
        sol = solve_exact(C, a, b)
        assert sol.value == pytest.approx(0.1, abs=1e-12)


class TestExactDuals:
    @pytest.mark.parametrize("seed", range(8))
    def test_feasibility_strong_duality_slackness(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        C = rng.uniform(0, 4, size=(n, n))
        a, b = _uniform(n), _uniform(n)
        sol = solve_exact(C, a, b)
        # dual feasibility
        assert sol.duals.feasibility_margin(C) >= -1e-9
        # strong duality
        assert sol.duals.objective(a, b) == pytest.approx(sol.value, abs=1e-7)
        # complementary slackness on supported entries
        P = sol.plan.entries
        gap = C - sol.duals.f[:, None] - sol.duals.g[None, :]
        assert np.abs(gap[P > 1e-9]).max() < 1e-7

    def test_duals_on_nonuniform_problem(self):
        rng = np.random.default_rng(3)
        C = rng.uniform(0, 4, size=(4, 6))
        a = rng.uniform(0.5, 1.5, size=4)
        a /= a.sum()
        b = rng.uniform(0.5, 1.5, size=6)
        b /= b.sum()
        sol = solve_exact(C, a, b)
        assert sol.duals.feasibility_margin(C) >= -1e-9
        assert sol.duals.objective(a, b) == pytest.approx(sol.value, abs=1e-7)

    def test_signed_costs(self):
        """Negative cost entries are legal on both routes."""
        rng = np.random.default_rng(11)
        for n, m in [(5, 5), (4, 6)]:
            C = rng.uniform(-3, 3, size=(n, m))
            a = _uniform(n) if n == m else rng.dirichlet(np.ones(n) * 5)
            b = _uniform(m) if n == m else rng.dirichlet(np.ones(m) * 5)
            sol = solve_exact(C, a, b)
            assert sol.duals.feasibility_margin(C) >= -1e-9
            assert sol.duals.objective(a, b) == pytest.approx(sol.value, abs=1e-7)
            if n == m:
                assert sol.value == pytest.approx(brute_force_uniform_ot(C), abs=1e-9)

    def test_weak_duality_under_perturbation(self):
        """Any feasible perturbed duals stay below the optimal value."""
        rng = np.random.default_rng(5)
        C = rng.uniform(0, 4, size=(6, 6))
        a = b = _uniform(6)
        sol = solve_exact(C, a, b)
        for _ in range(10):
            f = sol.duals.f - rng.uniform(0, 1, size=6)
            g = sol.duals.g - rng.uniform(0, 1, size=6)
            assert (C - f[:, None] - g[None, :]).min() >= 0  # still feasible
            assert f @ a + g @ b <= sol.value + 1e-7

    @pytest.mark.parametrize("lam", [0.5, 2.0, 10.0])
    def test_scale_equivariance(self, lam):
        rng = np.random.default_rng(9)
        C = rng.uniform(0, 4, size=(5, 5))
        a = b = _uniform(5)
        assert solve_exact(lam * C, a, b).value == pytest.approx(
            lam * solve_exact(C, a, b).value, abs=1e-9
        )


class TestSinkhorn:
    def test_large_epsilon_independent_coupling(self):
        """epsilon = 1e3 * max(C) drives the plan to a b^T."""
        rng = np.random.default_rng(0)
        C = rng.uniform(0, 2, size=(3, 4))
        a = np.array([0.2, 0.5, 0.3])
        b = np.array([0.1, 0.2, 0.3, 0.4])
        sol = solve_sinkhorn(C, a, b, epsilon=1e3 * C.max())
        assert np.abs(sol.plan.entries - np.outer(a, b)).max() < 1e-3

    def test_small_epsilon_approaches_exact(self):
        """epsilon = 1e-3 * mean(C) on the 2x2 instance: value near 0.5."""
        C = np.array([[0.0, 2.0], [3.0, 1.0]])
        sol = solve_sinkhorn(C, _uniform(2), _uniform(2), epsilon=1e-3 * C.mean())
        assert abs(sol.value - 0.5) < 5e-2

    def test_near_zero_self_transport(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(5, 2))
        C = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        sol = solve_sinkhorn(C, _uniform(5), _uniform(5), epsilon=1e-3 * C.max())
        assert sol.value < 1e-2 * C.max()

    def test_marginal_feasibility_within_tol(self):
        rng = np.random.default_rng(2)
        C = rng.uniform(0, 3, size=(6, 6))
        tol = 1e-6
        sol = solve_sinkhorn(C, _uniform(6), _uniform(6), epsilon=0.1, tol=tol)
        P = sol.plan.entries
        err = np.abs(P.sum(1) - 1 / 6).sum() + np.abs(P.sum(0) - 1 / 6).sum()
        assert err <= tol

    def test_convergence_error_carries_marginal_error(self):
        rng = np.random.default_rng(10)
        C = rng.uniform(0, 3, size=(8, 8))
        with pytest.raises(ConvergenceError) as exc:
            solve_sinkhorn(C, _uniform(8), _uniform(8), epsilon=1e-2, tol=1e-12, max_iter=3)
        assert exc.value.marginal_error > 0

    def test_duals_marked_inexact_and_pinned(self):
        C = np.array([[0.0, 2.0], [3.0, 1.0]])
        a = b = _uniform(2)
        sol = solve_sinkhorn(C, a, b, epsilon=0.5)
        assert not sol.duals.exact
        assert sol.duals.objective(a, b) == pytest.approx(sol.value, abs=1e-9)


class TestSinkhornDivergence:
    def test_identical_measures_zero(self):
        rng = np.random.default_rng(4)
        pts = rng.normal(size=(4, 2))
        C = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        a = _uniform(4)
        assert abs(sinkhorn_divergence(C, C, C, a, a, epsilon=0.7)) <= 1e-9

    def test_large_epsilon_closed_form(self):
        """As epsilon grows the divergence tends to the independent-coupling gap."""
        rng = np.random.default_rng(6)
        xs, ys = rng.normal(size=(4, 2)), rng.normal(size=(5, 2)) + 1.0
        Cxy = np.linalg.norm(xs[:, None] - ys[None, :], axis=2)
        Cxx = np.linalg.norm(xs[:, None] - xs[None, :], axis=2)
        Cyy = np.linalg.norm(ys[:, None] - ys[None, :], axis=2)
        a, b = _uniform(4), _uniform(5)
        expect = a @ Cxy @ b - 0.5 * (a @ Cxx @ a + b @ Cyy @ b)
        got = sinkhorn_divergence(Cxy, Cxx, Cyy, a, b, epsilon=1e4 * Cxy.max())
        assert abs(got - expect) < 1e-3

    def test_nonnegative_on_random_instances(self):
        """50 random 4x4 point-cloud instances stay >= -1e-9."""
        rng = np.random.default_rng(7)
        for _ in range(50):
            xs, ys = rng.normal(size=(4, 3)), rng.normal(size=(4, 3)) + rng.normal()
            Cxy = np.linalg.norm(xs[:, None] - ys[None, :], axis=2)
            Cxx = np.linalg.norm(xs[:, None] - xs[None, :], axis=2)
            Cyy = np.linalg.norm(ys[:, None] - ys[None, :], axis=2)
            a = b = _uniform(4)
            assert sinkhorn_divergence(Cxy, Cxx, Cyy, a, b, epsilon=0.5) >= -1e-9


class TestEvaluatePlan:
    def test_diagonal_plan(self):
        plan = TransportPlan(np.eye(2) / 2, _uniform(2), _uniform(2))
        assert evaluate_plan(np.array([[0.0, 1.0], [1.0, 0.0]]), plan) == 0.0

    def test_independent_coupling_bilinear(self):
        rng = np.random.default_rng(8)
        C = rng.uniform(size=(3, 4))
        a, b = np.array([0.2, 0.3, 0.5]), np.array([0.25] * 4)
        plan = TransportPlan(np.outer(a, b), a, b)
        assert evaluate_plan(C, plan) == pytest.approx(float(a @ C @ b))

    def test_matches_solver_value(self):
        rng = np.random.default_rng(9)
        C = rng.uniform(size=(5, 5))
        sol = solve_exact(C, _uniform(5), _uniform(5))
        assert evaluate_plan(C, sol.plan) == pytest.approx(sol.value, abs=1e-9)

    def test_dimension_mismatch(self):
        plan = TransportPlan(np.eye(2) / 2, _uniform(2), _uniform(2))
        with pytest.raises(DimensionError):
            evaluate_plan(np.zeros((3, 3)), plan)


class TestKernelConfig:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            KernelConfig(kind="magic")

    def test_exact_kernel_cost(self):
        C = np.array([[0.0, 2.0], [3.0, 1.0]])
        assert kernel_cost(KernelConfig("exact"), C, _uniform(2), _uniform(2)) == pytest.approx(0.5)

    def test_divergence_requires_self_costs(self):
        with pytest.raises(ValueError):
            kernel_cost(KernelConfig("sinkhorn_divergence"), np.eye(2), _uniform(2), _uniform(2))
