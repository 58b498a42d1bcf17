"""Tests for the IALM P-solver, the non-negative Lasso and the simplex projection."""

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.optimize import nnls

from rstr_cdmer.core.kernels import BlockedFeatureSet, KernelConfig, build_kernel_set
from rstr_cdmer.core.model import RstrHyperparams, objective
from rstr_cdmer.core.optimizer import (
    IalmParams,
    LassoProblem,
    PSubproblem,
    SpectralQSolver,
    build_w_design,
    lasso_kkt_residual,
    p_objective,
    project_simplex,
    project_simplex_columns,
    soft_threshold,
    solve_nonneg_lasso,
    solve_p_subproblem,
    solve_q,
)
from rstr_cdmer.errors import DimensionMismatchError


def _onehot(rng, n_classes, n_samples):
    L = np.zeros((n_classes, n_samples))
    L[rng.integers(0, n_classes, size=n_samples), np.arange(n_samples)] = 1.0
    return L


def _problem(rng, n_basis=12, n_source=6, n_classes=3, mu=0.0, gamma=0.0):
    return PSubproblem(
        ks_tilde=rng.standard_normal((n_basis, n_source)),
        kst_tilde=rng.standard_normal(n_basis),
        labels=_onehot(rng, n_classes, n_source),
        mu=mu,
        gamma=gamma,
    )


class TestSoftThreshold:
    """Tests for the elementwise shrinkage operator."""

    @pytest.mark.parametrize("a, zeta, expected", [(0.0, 1.0, 0.0), (3.0, 1.0, 2.0), (-3.0, 1.0, -2.0)])
    def test_scalar_examples(self, a, zeta, expected) -> None:
        """Dead zone, upper and lower branches."""
        assert soft_threshold(a, zeta) == expected

    def test_dead_zone_boundary(self) -> None:
        """|a| == zeta maps to zero."""
        assert soft_threshold(1.0, 1.0) == 0.0
        assert soft_threshold(-1.0, 1.0) == 0.0

    def test_array_input(self) -> None:
        """Arrays are thresholded elementwise."""
        out = soft_threshold(np.array([[2.5, -0.5], [-4.0, 0.0]]), 0.5)
        np.testing.assert_array_equal(out, [[2.0, 0.0], [-3.5, 0.0]])

    def test_negative_zeta(self) -> None:
        """A negative threshold is invalid."""
        with pytest.raises(ValueError):
            soft_threshold(1.0, -0.1)

    def test_odd_and_shrinking(self, rng) -> None:
        """S(-a) = -S(a), |S(a)| <= |a| and the sign is never flipped."""
        a = 10.0 * rng.standard_normal(1000)
        for zeta in (0.0, 0.5, 3.0):
            out = soft_threshold(a, zeta)
            np.testing.assert_array_equal(soft_threshold(-a, zeta), -out)
            assert np.all(np.abs(out) <= np.abs(a))
            assert np.all(out * a >= 0)


class TestSolveQ:
    """Tests for the closed-form Q step."""

    def test_zero_data(self, rng) -> None:
        """gamma=0, L=0, T=0, P=0 gives Q=0."""
        problem = PSubproblem(
            ks_tilde=rng.standard_normal((5, 4)),
            kst_tilde=np.zeros(5),
            labels=np.zeros((2, 4)),
        )
        Q = solve_q(problem, np.zeros((5, 2)), np.zeros((5, 2)), kappa=1.0)
        np.testing.assert_allclose(Q, 0.0, atol=1e-14)

    def test_stationary_point(self, rng) -> None:
        """The analytic gradient of the Q-step objective vanishes at the returned Q."""
        problem = _problem(rng, gamma=0.7)
        P = rng.standard_normal((12, 3))
        T = rng.standard_normal((12, 3))
        kappa = 2.5
        Q = solve_q(problem, P, T, kappa)

        Ks, k, L = problem.ks_tilde, problem.kst_tilde, problem.labels
        grad = (
            -2.0 * Ks @ (L - Q.T @ Ks).T
            + 2.0 * problem.gamma * np.outer(k, k @ Q)
            - T
            - kappa * (P - Q)
        )
        np.testing.assert_allclose(grad, 0.0, atol=1e-8)

    def test_large_kappa_limit(self, rng) -> None:
        """For kappa=1e9 the step collapses onto P + T/kappa."""
        problem = _problem(rng, gamma=1.0)
        P = rng.standard_normal((12, 3))
        T = rng.standard_normal((12, 3))
        kappa = 1e9
        Q = solve_q(problem, P, T, kappa)
        np.testing.assert_allclose(Q, P + T / kappa, atol=1e-6)

    def test_invalid_kappa(self, rng) -> None:
        """kappa must be positive."""
        problem = _problem(rng)
        with pytest.raises(ValueError):
            solve_q(problem, np.zeros((12, 3)), np.zeros((12, 3)), kappa=0.0)

    def test_shape_mismatch(self, rng) -> None:
        """P with the wrong shape is rejected."""
        problem = _problem(rng)
        with pytest.raises(DimensionMismatchError):
            solve_q(problem, np.zeros((11, 3)), np.zeros((12, 3)), kappa=1.0)

    def test_spectral_solver_matches_cholesky(self, rng) -> None:
        """One eigendecomposition reproduces the Cholesky Q step over a range of kappa."""
        problem = _problem(rng, gamma=0.3)
        solver = SpectralQSolver(problem)
        for kappa in (1e-2, 0.7, 15.0, 1e4):
            P = rng.standard_normal((12, 3))
            T = rng.standard_normal((12, 3))
            np.testing.assert_allclose(solver.solve(P, T, kappa), solve_q(problem, P, T, kappa), rtol=1e-7, atol=1e-9)


class TestSolvePSubproblem:
    """Tests for the IALM iterations."""

    def test_least_squares_oracle(self, rng) -> None:
        """mu=0, gamma=0 recovers the least-squares solution."""
        problem = _problem(rng, n_basis=4, n_source=12)
        result = solve_p_subproblem(problem, IalmParams(max_iters=2000))
        oracle, *_ = np.linalg.lstsq(problem.ks_tilde.T, problem.labels.T, rcond=None)
        assert result.converged
        np.testing.assert_allclose(result.P, oracle, atol=1e-5)

    def test_large_mu_zeroes_p(self, rng) -> None:
        """An L1 weight of ten times ||Ks L^T||_inf drives P to zero."""
        problem = _problem(rng, n_basis=6, n_source=8)
        mu = 10.0 * float(np.max(np.abs(problem.rhs())))
        heavy = PSubproblem(
            ks_tilde=problem.ks_tilde,
            kst_tilde=problem.kst_tilde,
            labels=problem.labels,
            mu=mu,
            gamma=problem.gamma,
        )
        result = solve_p_subproblem(heavy)
        np.testing.assert_allclose(result.P, 0.0, atol=1e-10)

    def test_objective_does_not_increase(self, rng) -> None:
        """With mu=0.1, gamma=1 the returned P is no worse than the start."""
        problem = _problem(rng, n_basis=16, n_source=8, mu=0.1, gamma=1.0)
        P_init = np.zeros((16, 3))
        result = solve_p_subproblem(problem, P_init=P_init)
        assert p_objective(problem, result.P) <= p_objective(problem, P_init)

    def test_non_convergence_is_reported(self, rng) -> None:
        """A single iteration returns converged=False without raising."""
        problem = _problem(rng, mu=0.1, gamma=1.0)
        result = solve_p_subproblem(problem, IalmParams(max_iters=1))
        assert not result.converged
        assert result.iterations == 1
        assert np.all(np.isfinite(result.P))

    def test_params_validation(self) -> None:
        """kappa_init above kappa_max and rho <= 1 are rejected."""
        with pytest.raises(ValidationError):
            IalmParams(kappa_init=10.0, kappa_max=1.0)
        with pytest.raises(ValidationError):
            IalmParams(rho=1.0)


class TestBuildWDesign:
    """Tests for the stacked Lasso design of the w-step."""

    def _setup(self, rng, n_blocks=3):
        source = BlockedFeatureSet(rng.standard_normal((n_blocks, 4, 5)), "source")
        target = BlockedFeatureSet(rng.standard_normal((n_blocks, 4, 7)), "target")
        kernels = build_kernel_set(source, target, KernelConfig())
        return kernels, _onehot(rng, 3, 5)

    def test_zero_coefficients(self, rng) -> None:
        """K=1, P=0 gives D=0 and y=[vec(L); 0]."""
        kernels, L = self._setup(rng, n_blocks=1)
        lasso = build_w_design(np.zeros((12, 3)), kernels, L, gamma=0.5)
        np.testing.assert_array_equal(lasso.D, 0.0)
        np.testing.assert_array_equal(lasso.y, np.concatenate([L.reshape(-1, order="F"), np.zeros(3)]))

    def test_gamma_zero_bottom_block(self, rng) -> None:
        """gamma=0 leaves the last c rows of D at zero."""
        kernels, L = self._setup(rng)
        lasso = build_w_design(rng.standard_normal((12, 3)), kernels, L, gamma=0.0)
        np.testing.assert_array_equal(lasso.D[-3:], 0.0)

    def test_matches_full_objective(self, rng) -> None:
        """||y - Dw||^2 equals loss + gamma * relaxed MMD for random w."""
        kernels, L = self._setup(rng)
        P = rng.standard_normal((12, 3))
        gamma = 0.8
        lasso = build_w_design(P, kernels, L, gamma=gamma)
        hp = RstrHyperparams(lam=0.0, mu=0.0, gamma=gamma)
        for _ in range(10):
            w = rng.uniform(0.0, 2.0, size=3)
            assert lasso.objective(w) == pytest.approx(objective(P, w, kernels, L, hp), rel=1e-10)

    def test_negative_gamma(self, rng) -> None:
        """gamma < 0 is rejected."""
        kernels, L = self._setup(rng)
        with pytest.raises(ValueError):
            build_w_design(np.zeros((12, 3)), kernels, L, gamma=-1.0)


class TestNonnegLasso:
    """Tests for the non-negative Lasso solver."""

    def test_identity_design(self) -> None:
        """D=I, y=(3,-1), lam=2 gives w=(2,0)."""
        problem = LassoProblem(y=np.array([3.0, -1.0]), D=np.eye(2), lam=2.0)
        result = solve_nonneg_lasso(problem)
        assert result.converged
        np.testing.assert_allclose(result.w, [2.0, 0.0], atol=1e-10)

    def test_l1_dominance(self, rng) -> None:
        """lam >= 2 max_i d_i^T y forces w=0."""
        D = rng.standard_normal((10, 3))
        y = rng.standard_normal(10)
        lam = 2.0 * float(np.max(np.abs(D.T @ y))) + 0.1
        result = solve_nonneg_lasso(LassoProblem(y=y, D=D, lam=lam))
        np.testing.assert_allclose(result.w, 0.0, atol=1e-10)

    def test_signed_variant(self) -> None:
        """Without the sign constraint negative coordinates survive."""
        problem = LassoProblem(y=np.array([3.0, -4.0]), D=np.eye(2), lam=2.0, nonneg=False)
        result = solve_nonneg_lasso(problem)
        np.testing.assert_allclose(result.w, [2.0, -3.0], atol=1e-10)

    def test_kkt_on_random_instances(self, rng) -> None:
        """Returned points satisfy the optimality conditions."""
        for _ in range(10):
            D = rng.standard_normal((15, 6))
            problem = LassoProblem(y=rng.standard_normal(15), D=D, lam=float(rng.uniform(0.1, 3.0)))
            result = solve_nonneg_lasso(problem)
            assert result.converged
            assert np.all(result.w >= 0)
            assert lasso_kkt_residual(problem, result.w) <= 1e-8

    def test_not_worse_than_grid(self, rng) -> None:
        """The two-variable solution is no worse than any point of a grid over [0,5]^2."""
        D = rng.standard_normal((6, 2))
        problem = LassoProblem(y=D @ np.array([1.5, 2.5]), D=D, lam=0.5)
        solved = problem.objective(solve_nonneg_lasso(problem).w)
        ticks = np.linspace(0.0, 5.0, 501)
        W = np.stack(np.meshgrid(ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 2)
        residuals = problem.y[None, :] - W @ D.T
        grid = np.sum(residuals**2, axis=1) + problem.lam * W.sum(axis=1)
        assert solved <= grid.min() + 1e-6

    def test_w_init_length(self) -> None:
        """A starting point of the wrong length is rejected."""
        problem = LassoProblem(y=np.ones(3), D=np.eye(3), lam=1.0)
        with pytest.raises(DimensionMismatchError):
            solve_nonneg_lasso(problem, w_init=np.ones(2))

    def test_sweep_limit(self, rng) -> None:
        """Running out of sweeps is reported, not raised."""
        D = rng.standard_normal((20, 8))
        D[:, 1] = D[:, 0] + 1e-3 * rng.standard_normal(20)
        problem = LassoProblem(y=rng.standard_normal(20), D=D, lam=0.01)
        result = solve_nonneg_lasso(problem, max_sweeps=1)
        assert result.sweeps == 1
        assert result.w.shape == (8,)

    def test_zero_lambda_is_nnls(self, rng) -> None:
        """lam = 0 reduces to non-negative least squares."""
        D = rng.standard_normal((12, 4))
        y = rng.standard_normal(12)
        result = solve_nonneg_lasso(LassoProblem(y=y, D=D, lam=0.0))
        expected, _ = nnls(D, y)
        np.testing.assert_allclose(result.w, expected, atol=1e-8)
        assert result.sweeps == 0

    def test_warm_start_at_optimum(self, rng) -> None:
        """Starting from the solution takes no further sweeps and keeps it."""
        D = rng.standard_normal((15, 5))
        problem = LassoProblem(y=rng.standard_normal(15), D=D, lam=0.8)
        first = solve_nonneg_lasso(problem)
        assert first.converged
        again = solve_nonneg_lasso(problem, w_init=first.w)
        assert again.sweeps == 0
        np.testing.assert_array_equal(again.w, first.w)

    def test_matches_objective_scaling(self, rng) -> None:
        """The solution minimizes ||y - Dw||^2 + lam ||w||_1, not the per-row averaged loss."""
        D = rng.standard_normal((30, 3))
        problem = LassoProblem(y=D @ np.array([1.0, 0.5, 0.0]) + 0.2 * rng.standard_normal(30), D=D, lam=4.0)
        w = solve_nonneg_lasso(problem).w
        for _ in range(200):
            other = np.maximum(w + 0.05 * rng.standard_normal(3), 0.0)
            assert problem.objective(w) <= problem.objective(other) + 1e-10


class TestProjectSimplex:
    """Tests for the Euclidean projection onto the probability simplex."""

    def test_feasible_unchanged(self) -> None:
        """A point already on the simplex is returned as is."""
        np.testing.assert_allclose(project_simplex(np.array([0.2, 0.3, 0.5])), [0.2, 0.3, 0.5], atol=1e-12)

    def test_vertex(self) -> None:
        """(2,0,0) projects to the vertex (1,0,0)."""
        np.testing.assert_allclose(project_simplex(np.array([2.0, 0.0, 0.0])), [1.0, 0.0, 0.0])

    def test_clipped_coordinate(self) -> None:
        """(0.5,0.4,-0.3) projects to (0.55,0.45,0)."""
        np.testing.assert_allclose(project_simplex(np.array([0.5, 0.4, -0.3])), [0.55, 0.45, 0.0], atol=1e-12)

    def test_tie_is_preserved(self) -> None:
        """(0.5,0.5,-1) projects to (0.5,0.5,0); argmax takes the first."""
        p = project_simplex(np.array([0.5, 0.5, -1.0]))
        np.testing.assert_allclose(p, [0.5, 0.5, 0.0])
        assert int(np.argmax(p)) == 0

    def test_properties_on_random_vectors(self, rng) -> None:
        """Feasibility, idempotence and ranking preservation."""
        for _ in range(200):
            v = rng.normal(scale=2.0, size=int(rng.integers(2, 9)))
            p = project_simplex(v)
            assert np.all(p >= 0)
            assert p.sum() == pytest.approx(1.0, abs=1e-12)
            np.testing.assert_allclose(project_simplex(p), p, atol=1e-12)
            assert np.argmax(p) == np.argmax(v)

    def test_columns(self, rng) -> None:
        """Each column is projected independently."""
        V = rng.standard_normal((3, 5))
        out = project_simplex_columns(V)
        for j in range(5):
            np.testing.assert_allclose(out[:, j], project_simplex(V[:, j]))

    def test_empty_vector(self) -> None:
        """An empty vector has no projection."""
        with pytest.raises(ValueError):
            project_simplex(np.array([]))
