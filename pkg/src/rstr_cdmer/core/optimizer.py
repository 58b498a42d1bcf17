"""
Numerical kernels behind RSTR training and prediction.

- IALM solver for the L1-regularized P-subproblem (closed-form Q step, soft-threshold
  P step, multiplier and penalty updates)
- Non-negative Lasso w-subproblem, solved with scikit-learn coordinate descent
- Euclidean projection onto the probability simplex
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import Lasso, LinearRegression

from ..errors import DimensionMismatchError
from .kernels import KernelSet


logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Dual-gap tolerances handed to sklearn; tightened until the KKT check passes
_INITIAL_GAP_TOL = 1e-10
_MIN_GAP_TOL = 1e-16


class IalmParams(BaseModel):
    """Penalty schedule and stopping rule of the IALM P-solver."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kappa_init: float = Field(default=1e-2, gt=0)
    rho: float = Field(default=1.1, gt=1)
    kappa_max: float = Field(default=1e6, gt=0)
    epsilon: float = Field(default=1e-7, gt=0, description="Infinity-norm stop threshold")
    max_iters: int = Field(default=500, ge=1)

    @model_validator(mode="after")
    def check_kappa_range(self) -> "IalmParams":
        if self.kappa_init > self.kappa_max:
            raise ValueError("kappa_init must not exceed kappa_max")
        return self


@dataclass(frozen=True)
class PSubproblem:
    """
    min_P ||L - P^T Ks||_F^2 + mu ||P||_1 + gamma ||P^T kst||_2^2.

    ``ks_tilde`` is (Ns+Nt) x Ns, ``kst_tilde`` has length Ns+Nt and ``labels`` is c x Ns.
    """

    ks_tilde: np.ndarray
    kst_tilde: np.ndarray
    labels: np.ndarray
    mu: float = 0.0
    gamma: float = 0.0

    def __post_init__(self) -> None:
        ks = np.asarray(self.ks_tilde, dtype=np.float64)
        kst = np.asarray(self.kst_tilde, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.float64)
        if ks.ndim != 2 or labels.ndim != 2:
            raise DimensionMismatchError("ks_tilde and labels must be matrices")
        if kst.shape[0] != ks.shape[0] or labels.shape[1] != ks.shape[1]:
            raise DimensionMismatchError(
                f"inconsistent shapes: Ks {ks.shape}, kst {kst.shape}, L {labels.shape}"
            )
        for name in ("mu", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        object.__setattr__(self, "ks_tilde", ks)
        object.__setattr__(self, "kst_tilde", kst)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_kernels(
        cls,
        kernels: KernelSet,
        w: np.ndarray,
        labels: np.ndarray,
        mu: float,
        gamma: float,
    ) -> "PSubproblem":
        ks_tilde, kst_tilde = kernels.combine(w)
        return cls(ks_tilde=ks_tilde, kst_tilde=kst_tilde, labels=labels, mu=mu, gamma=gamma)

    @property
    def n_basis(self) -> int:
        return self.ks_tilde.shape[0]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[0]

    def normal_matrix(self) -> np.ndarray:
        """Ks Ks^T + gamma kst kst^T."""
        return self.ks_tilde @ self.ks_tilde.T + self.gamma * np.outer(
            self.kst_tilde, self.kst_tilde
        )

    def rhs(self) -> np.ndarray:
        """Ks L^T."""
        return self.ks_tilde @ self.labels.T


@dataclass(frozen=True)
class LassoProblem:
    """min_w ||y - D w||_2^2 + lam ||w||_1, optionally subject to w >= 0."""

    y: np.ndarray
    D: np.ndarray
    lam: float
    nonneg: bool = True

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        D = np.atleast_2d(np.asarray(self.D, dtype=np.float64))
        if D.shape[0] != y.shape[0]:
            raise DimensionMismatchError(
                f"design has {D.shape[0]} rows but response has length {y.shape[0]}"
            )
        if not np.isfinite(self.lam) or self.lam < 0:
            raise ValueError(f"lam must be finite and non-negative, got {self.lam}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "D", D)

    @property
    def n_features(self) -> int:
        return self.D.shape[1]

    def objective(self, w: np.ndarray) -> float:
        r = self.y - self.D @ w
        return float(r @ r + self.lam * np.abs(w).sum())


@dataclass(frozen=True)
class IalmResult:
    P: np.ndarray
    iterations: int
    converged: bool
    residual: float


@dataclass(frozen=True)
class LassoResult:
    w: np.ndarray
    sweeps: int
    converged: bool
    kkt_residual: float


def soft_threshold(a: ArrayLike, zeta: float) -> ArrayLike:
    """
    Soft-thresholding operator S_zeta, elementwise.

    a - zeta where a > zeta, a + zeta where a < -zeta, 0 otherwise.
    """
    if zeta < 0:
        raise ValueError("zeta must be non-negative")
    arr = np.asarray(a, dtype=np.float64)
    out = np.where(arr > zeta, arr - zeta, np.where(arr < -zeta, arr + zeta, 0.0))
    if np.ndim(a) == 0:
        return float(out)
    return out


def p_objective(problem: PSubproblem, P: np.ndarray) -> float:
    """Value of the P-subproblem objective at P."""
    residual = problem.labels - P.T @ problem.ks_tilde
    gap = P.T @ problem.kst_tilde
    return float(
        np.sum(residual**2) + problem.mu * np.abs(P).sum() + problem.gamma * gap @ gap
    )


def q_step_objective(
    problem: PSubproblem, Q: np.ndarray, P: np.ndarray, T: np.ndarray, kappa: float
) -> float:
    """Augmented Lagrangian minus the L1 term, as a function of Q."""
    residual = problem.labels - Q.T @ problem.ks_tilde
    gap = Q.T @ problem.kst_tilde
    diff = P - Q
    return float(
        np.sum(residual**2)
        + problem.gamma * gap @ gap
        + np.sum(T * diff)
        + 0.5 * kappa * np.sum(diff**2)
    )


def _check_pt(problem: PSubproblem, P: np.ndarray, T: np.ndarray) -> None:
    expected = (problem.n_basis, problem.n_classes)
    if P.shape != expected or T.shape != expected:
        raise DimensionMismatchError(
            f"P and T must be {expected}, got {P.shape} and {T.shape}"
        )


def solve_q(problem: PSubproblem, P: np.ndarray, T: np.ndarray, kappa: float) -> np.ndarray:
    """
    Closed-form Q step.

    Q = (Ks Ks^T + gamma kst kst^T + kappa/2 I)^-1 (Ks L^T + (T + kappa P)/2),
    solved with a Cholesky factorization.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    P = np.asarray(P, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    _check_pt(problem, P, T)

    system = problem.normal_matrix() + 0.5 * kappa * np.eye(problem.n_basis)
    rhs = problem.rhs() + 0.5 * (T + kappa * P)
    try:
        factor = cho_factor(system, lower=True, check_finite=True)
    except LinAlgError as e:
        raise LinAlgError(f"Q-step factorization failed (kappa={kappa}): {e}") from e
    return cho_solve(factor, rhs)


class SpectralQSolver:
    """
    ``solve_q`` for a sequence of kappa values from one eigendecomposition.

    Ks Ks^T + gamma kst kst^T = V diag(e) V^T is fixed during an IALM run while kappa
    changes every iteration, so each step is V ((V^T rhs) / (e + kappa/2)). Eigenvalues
    are clipped at zero; the matrix is PSD and only rounding can make them negative.
    """

    def __init__(self, problem: PSubproblem):
        eigvals, eigvecs = eigh(problem.normal_matrix())
        self.eigvals = np.clip(eigvals, 0.0, None)
        self.eigvecs = eigvecs
        self.rhs = problem.rhs()

    def solve(self, P: np.ndarray, T: np.ndarray, kappa: float) -> np.ndarray:
        rhs = self.rhs + 0.5 * (T + kappa * P)
        coeffs = (self.eigvecs.T @ rhs) / (self.eigvals + 0.5 * kappa)[:, None]
        return self.eigvecs @ coeffs


def solve_p_subproblem(
    problem: PSubproblem,
    params: Optional[IalmParams] = None,
    P_init: Optional[np.ndarray] = None,
) -> IalmResult:
    """
    Inexact augmented Lagrangian iterations for the P-subproblem.

    Each iteration updates Q in closed form, sets P = S_{mu/kappa}[Q - T/kappa],
    updates T <- T + kappa (P - Q) and kappa <- min(rho kappa, kappa_max). The run has
    converged once ||P - Q||_inf < epsilon and the P update has stalled
    (||P_k - P_{k-1}||_inf < epsilon).

    Returns:
        IalmResult with the final P on convergence, otherwise the iterate with the
        smallest ||P - Q||_inf and ``converged=False``
    """
    params = params or IalmParams()
    shape = (problem.n_basis, problem.n_classes)
    P = np.zeros(shape) if P_init is None else np.array(P_init, dtype=np.float64)
    T = np.zeros(shape)
    _check_pt(problem, P, T)

    solver = SpectralQSolver(problem)
    kappa = params.kappa_init
    best_P, best_residual = P, np.inf

    for iteration in range(1, params.max_iters + 1):
        P_prev = P
        Q = solver.solve(P, T, kappa)
        P = soft_threshold(Q - T / kappa, problem.mu / kappa)
        T = T + kappa * (P - Q)
        kappa = min(params.rho * kappa, params.kappa_max)

        residual = float(np.max(np.abs(P - Q)))
        step = float(np.max(np.abs(P - P_prev)))
        if residual < best_residual:
            best_P, best_residual = P, residual

        if residual < params.epsilon and step < params.epsilon:
            logger.debug(f"IALM converged after {iteration} iterations")
            return IalmResult(P=P, iterations=iteration, converged=True, residual=residual)

    logger.warning(
        f"IALM did not converge in {params.max_iters} iterations "
        f"(best ||P-Q||_inf={best_residual:.3e})"
    )
    return IalmResult(
        P=best_P, iterations=params.max_iters, converged=False, residual=best_residual
    )


def build_w_design(
    P: np.ndarray,
    kernels: KernelSet,
    labels: np.ndarray,
    gamma: float,
    lam: float = 0.0,
) -> LassoProblem:
    """
    Stack the w-subproblem into a single Lasso: y = [z; 0_c], D = [A; sqrt(gamma) B].

    z is the column-major vectorization of L^s, column i of A vectorizes P^T K_i^s and
    column i of B is P^T ((1/Ns) K_i^s 1_s - (1/Nt) K_i^t 1_t). ``lam`` is carried into
    the returned problem as its L1 weight.
    """
    P = np.asarray(P, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if P.shape[0] != kernels.n_basis or labels.shape[1] != kernels.n_source:
        raise DimensionMismatchError(
            f"P {P.shape} / labels {labels.shape} do not match kernels "
            f"({kernels.n_basis} basis, {kernels.n_source} source samples)"
        )
    if P.shape[1] != labels.shape[0]:
        raise DimensionMismatchError("P and labels disagree on the number of classes")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")

    n_classes = labels.shape[0]
    z = labels.reshape(-1, order="F")
    # (K, c, Ns) -> column i is vec(P^T K_i^s)
    projected = np.einsum("nc,knm->kcm", P, kernels.per_block_source)
    A = projected.transpose(0, 2, 1).reshape(kernels.n_blocks, -1).T
    B = (kernels.mean_gaps() @ P).T

    y = np.concatenate([z, np.zeros(n_classes)])
    D = np.vstack([A, np.sqrt(gamma) * B])
    return LassoProblem(y=y, D=D, lam=lam, nonneg=True)


def lasso_kkt_residual(problem: LassoProblem, w: np.ndarray) -> float:
    """Largest violation of the Lasso optimality conditions at w."""
    grad = 2.0 * problem.D.T @ (problem.D @ w - problem.y)
    lam = problem.lam
    if problem.nonneg:
        active = w > 0
        violation = np.where(active, np.abs(grad + lam), np.maximum(0.0, -(grad + lam)))
    else:
        nonzero = w != 0
        violation = np.where(
            nonzero,
            np.abs(grad + lam * np.sign(w)),
            np.maximum(0.0, np.abs(grad) - lam),
        )
    return float(violation.max()) if violation.size else 0.0


def _fit_lasso(problem: LassoProblem, w: np.ndarray, max_iter: int, tol: float) -> Tuple[np.ndarray, int]:
    # sklearn minimizes (1/2m)||y - Dw||^2 + alpha ||w||_1, so alpha = lam / (2m)
    alpha = problem.lam / (2.0 * problem.D.shape[0])
    lasso = Lasso(
        alpha=alpha,
        positive=problem.nonneg,
        fit_intercept=False,
        warm_start=True,
        max_iter=max_iter,
        tol=tol,
    )
    lasso.coef_ = w.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        lasso.fit(problem.D, problem.y)
    return np.asarray(lasso.coef_, dtype=np.float64), int(lasso.n_iter_)


def solve_nonneg_lasso(
    problem: LassoProblem,
    w_init: Optional[np.ndarray] = None,
    max_sweeps: int = 10000,
    tol: float = 1e-8,
) -> LassoResult:
    """
    Coordinate descent on the (non-negative) Lasso via ``sklearn.linear_model.Lasso``.

    The fit is warm-started from ``w_init`` and repeated with a tighter dual-gap
    tolerance until the KKT residual drops below ``tol`` or the sweep budget is spent.
    With lam = 0 the problem is plain (non-negative) least squares.

    Args:
        problem: Lasso problem
        w_init: Starting point (all-ones by default, clipped to w >= 0 when nonneg)
        max_sweeps: Maximum number of full coordinate sweeps over all refits
        tol: KKT residual threshold

    Returns:
        LassoResult; ``converged=False`` if ``max_sweeps`` ran out
    """
    n = problem.n_features
    if w_init is None:
        w = np.ones(n)
    else:
        w = np.array(w_init, dtype=np.float64).reshape(-1)
        if w.shape[0] != n:
            raise DimensionMismatchError(f"w_init has length {w.shape[0]}, expected {n}")
    if problem.nonneg:
        w = np.maximum(w, 0.0)

    sweeps = 0
    if problem.lam == 0.0:
        regression = LinearRegression(fit_intercept=False, positive=problem.nonneg)
        w = np.asarray(regression.fit(problem.D, problem.y).coef_, dtype=np.float64)
    else:
        gap_tol = _INITIAL_GAP_TOL
        while lasso_kkt_residual(problem, w) > tol and sweeps < max_sweeps:
            w, used = _fit_lasso(problem, w, max_sweeps - sweeps, gap_tol)
            sweeps += used
            if gap_tol <= _MIN_GAP_TOL:
                break
            gap_tol = max(gap_tol * 1e-2, _MIN_GAP_TOL)

    if problem.nonneg:
        w = np.maximum(w, 0.0)
    residual = lasso_kkt_residual(problem, w)
    converged = residual <= tol
    if not converged:
        logger.warning(
            f"Lasso coordinate descent stopped after {sweeps} sweeps "
            f"(KKT residual {residual:.3e})"
        )
    return LassoResult(w=w, sweeps=sweeps, converged=converged, kkt_residual=residual)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """
    Euclidean projection of v onto {l : l >= 0, sum(l) = 1}.

    Sort-based threshold search: with u = sort(v) descending, rho is the largest j with
    u_j + (1 - sum_{i<=j} u_i)/j > 0 and the result is max(v + theta, 0) for
    theta = (1 - sum_{i<=rho} u_i)/rho.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite values")

    u = np.sort(v)[::-1]
    cumsum = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    rho = np.nonzero(u + (1.0 - cumsum) / ranks > 0)[0][-1]
    theta = (1.0 - cumsum[rho]) / (rho + 1.0)
    return np.maximum(v + theta, 0.0)


def project_simplex_columns(V: np.ndarray) -> np.ndarray:
    """Apply ``project_simplex`` to every column of V."""
    V = np.atleast_2d(np.asarray(V, dtype=np.float64))
    out = np.empty_like(V)
    for j in range(V.shape[1]):
        out[:, j] = project_simplex(V[:, j])
    return out
