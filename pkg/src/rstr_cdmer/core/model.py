"""The RSTR estimator: alternating (P, w) training and simplex-constrained prediction."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import DimensionMismatchError, KernelConfigMismatchError
from .kernels import (
    BlockedFeatureSet,
    KernelConfig,
    KernelSet,
    build_kernel_set,
    build_test_kernels,
    check_compatible,
    gram,
    resolve_bandwidth,
)
from .optimizer import (
    IalmParams,
    PSubproblem,
    build_w_design,
    project_simplex_columns,
    solve_nonneg_lasso,
    solve_p_subproblem,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelMatrix:
    """c x N one-hot class indicators with the ordered class names."""

    onehot: np.ndarray
    class_names: Tuple[str, ...]

    def __post_init__(self) -> None:
        onehot = np.array(self.onehot, dtype=np.float64, copy=True)
        names = tuple(str(n) for n in self.class_names)
        if onehot.ndim != 2:
            raise DimensionMismatchError("label matrix must be 2-D (c x N)")
        if len(names) != onehot.shape[0]:
            raise DimensionMismatchError(
                f"{len(names)} class names for {onehot.shape[0]} label rows"
            )
        if len(names) < 2:
            raise ValueError("at least two classes are required")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names: {names}")
        is_binary = np.all((onehot == 0) | (onehot == 1))
        if not is_binary or not np.all(onehot.sum(axis=0) == 1):
            raise ValueError("every label column must contain exactly one 1")
        onehot.setflags(write=False)
        object.__setattr__(self, "onehot", onehot)
        object.__setattr__(self, "class_names", names)

    @classmethod
    def from_indices(cls, indices: Sequence[int], class_names: Sequence[str]) -> "LabelMatrix":
        idx = np.asarray(indices, dtype=int)
        n_classes = len(class_names)
        if idx.size and (idx.min() < 0 or idx.max() >= n_classes):
            raise ValueError(f"class index out of range [0, {n_classes})")
        onehot = np.zeros((n_classes, idx.size))
        onehot[idx, np.arange(idx.size)] = 1.0
        return cls(onehot=onehot, class_names=tuple(class_names))

    @property
    def n_classes(self) -> int:
        return self.onehot.shape[0]

    @property
    def n_samples(self) -> int:
        return self.onehot.shape[1]

    @property
    def indices(self) -> np.ndarray:
        return np.argmax(self.onehot, axis=0)

    def select(self, indices: Sequence[int]) -> "LabelMatrix":
        return LabelMatrix(onehot=self.onehot[:, np.asarray(indices, dtype=int)], class_names=self.class_names)


class RstrHyperparams(BaseModel):
    """Trade-off weights and solver settings for one RSTR fit."""

    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    lam: float = Field(default=1.0, ge=0, alias="lambda", description="Region-weight sparsity")
    mu: float = Field(default=0.1, ge=0, description="Coefficient sparsity")
    gamma: float = Field(default=0.1, ge=0, description="Relaxed MMD weight")
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    outer_max_iters: int = Field(default=50, ge=1)
    outer_tol: float = Field(default=1e-5, gt=0, description="Relative objective change")
    ialm: IalmParams = Field(default_factory=IalmParams)
    lasso_max_sweeps: int = Field(default=10000, ge=1)
    fix_region_weights: bool = Field(
        default=False,
        description="Keep w = 1 (region-agnostic transfer regression)",
    )

    def summary(self) -> dict:
        """Flat view used in reports."""
        return {
            "lambda": self.lam,
            "mu": self.mu,
            "gamma": self.gamma,
            "kernel": self.kernel.describe(),
        }


@dataclass(frozen=True)
class PredictedLabels:
    """Simplex label vectors (c x Ntest), hard class indices and the raw scores."""

    label_vectors: np.ndarray
    hard_labels: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class RstrModel:
    """Learned P and w plus what prediction needs to rebuild test kernels."""

    P: np.ndarray
    w: np.ndarray
    kernel: KernelConfig
    train_source: BlockedFeatureSet
    train_target: BlockedFeatureSet
    class_names: Tuple[str, ...]
    objective_trace: Tuple[float, ...]
    converged: bool
    hyperparams: RstrHyperparams = field(default_factory=RstrHyperparams)
    warnings: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        n_basis = self.train_source.n_samples + self.train_target.n_samples
        if self.P.shape != (n_basis, len(self.class_names)):
            raise DimensionMismatchError(
                f"P has shape {self.P.shape}, expected {(n_basis, len(self.class_names))}"
            )
        if self.w.shape != (self.train_source.n_blocks,):
            raise DimensionMismatchError(
                f"w has shape {self.w.shape}, expected ({self.train_source.n_blocks},)"
            )
        if np.any(self.w < 0):
            raise ValueError("region weights must be non-negative")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def region_ranking(self) -> List[int]:
        """Block indices by decreasing weight (stable for ties)."""
        return [int(i) for i in np.argsort(-self.w, kind="stable")]

    def training_fingerprint(self) -> str:
        return _training_fingerprint(self.train_source, self.train_target)


def _training_fingerprint(source: BlockedFeatureSet, target: BlockedFeatureSet) -> str:
    return f"{source.fingerprint()}:{target.fingerprint()}"


def _onehot(labels: Union[LabelMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(labels, LabelMatrix):
        return labels.onehot
    return np.asarray(labels, dtype=np.float64)


def _check_pw(P: np.ndarray, w: np.ndarray, kernels: KernelSet) -> None:
    if P.ndim != 2 or P.shape[0] != kernels.n_basis:
        raise DimensionMismatchError(
            f"P has shape {P.shape}, expected ({kernels.n_basis}, c)"
        )
    if w.shape != (kernels.n_blocks,):
        raise DimensionMismatchError(
            f"w has shape {w.shape}, expected ({kernels.n_blocks},)"
        )


def relaxed_mmd(P: np.ndarray, w: np.ndarray, kernels: KernelSet) -> float:
    """||sum_i w_i P^T ((1/Ns) K_i^s 1_s - (1/Nt) K_i^t 1_t)||_2^2."""
    P = np.asarray(P, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_pw(P, w, kernels)
    gap = P.T @ (w @ kernels.mean_gaps())
    return float(gap @ gap)


def objective(
    P: np.ndarray,
    w: np.ndarray,
    kernels: KernelSet,
    labels: Union[LabelMatrix, np.ndarray],
    hp: RstrHyperparams,
) -> float:
    """
    Full RSTR objective.

    ||L - P^T sum_i w_i K_i^s||_F^2 + lam ||w||_1 + mu ||P||_1 + gamma * relaxed_mmd
    """
    P = np.asarray(P, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    L = _onehot(labels)
    _check_pw(P, w, kernels)
    if L.shape != (P.shape[1], kernels.n_source):
        raise DimensionMismatchError(
            f"labels have shape {L.shape}, expected {(P.shape[1], kernels.n_source)}"
        )

    ks_tilde, _ = kernels.combine(w)
    residual = L - P.T @ ks_tilde
    return float(
        np.sum(residual**2)
        + hp.lam * np.abs(w).sum()
        + hp.mu * np.abs(P).sum()
        + hp.gamma * relaxed_mmd(P, w, kernels)
    )


def mmd(source_block: np.ndarray, target_block: np.ndarray, cfg: KernelConfig) -> float:
    """
    Biased empirical MMD between two sample sets (one sample per column).

    sqrt(mean(K_ss) - 2 mean(K_st) + mean(K_tt)), clamped at zero before the root. The
    median-heuristic bandwidth is taken over the joined set.
    """
    source_block = np.atleast_2d(np.asarray(source_block, dtype=np.float64))
    target_block = np.atleast_2d(np.asarray(target_block, dtype=np.float64))
    if source_block.shape[0] != target_block.shape[0]:
        raise DimensionMismatchError(
            f"feature dimensions differ: {source_block.shape[0]} vs {target_block.shape[0]}"
        )
    sigma = resolve_bandwidth(cfg, np.hstack([source_block, target_block]))
    k_ss = gram(source_block, source_block, cfg, bandwidth=sigma).mean()
    k_st = gram(source_block, target_block, cfg, bandwidth=sigma).mean()
    k_tt = gram(target_block, target_block, cfg, bandwidth=sigma).mean()
    return float(np.sqrt(max(0.0, k_ss - 2.0 * k_st + k_tt)))


def _relative_change(previous: float, current: float) -> float:
    return abs(previous - current) / max(abs(previous), np.finfo(float).tiny)


def rebalance_scale(P: np.ndarray, w: np.ndarray, lam: float, mu: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Move scale between w and P: (P / s, s w) with s = sqrt(mu ||P||_1 / (lam ||w||_1)).

    P^T sum_i w_i K_i is unchanged, so only the two L1 terms move and s is their
    minimizer. Returns the inputs when either weight or either norm is zero.
    """
    w_norm = float(np.abs(w).sum())
    p_norm = float(np.abs(P).sum())
    if lam <= 0 or mu <= 0 or w_norm == 0 or p_norm == 0:
        return P, w
    s = np.sqrt(mu * p_norm / (lam * w_norm))
    return P / s, w * s


def train(
    source: BlockedFeatureSet,
    labels: LabelMatrix,
    target: BlockedFeatureSet,
    hp: Optional[RstrHyperparams] = None,
) -> RstrModel:
    """
    Fit RSTR by alternating a P-step (IALM) and a w-step (non-negative Lasso).

    Each outer iteration ends with ``rebalance_scale``. Starts from w = 1 and P = 0.
    A step that would increase the objective is rejected, so the recorded trace never
    increases. Stops when the relative objective change of an outer iteration drops
    below ``hp.outer_tol`` or after ``hp.outer_max_iters``.

    Raises:
        DimensionMismatchError: If labels, source and target are inconsistent
    """
    hp = hp or RstrHyperparams()
    if labels.n_samples != source.n_samples:
        raise DimensionMismatchError(
            f"{labels.n_samples} labels for {source.n_samples} source samples"
        )
    check_compatible(source, target)

    kernels = build_kernel_set(source, target, hp.kernel)
    L = labels.onehot
    w = np.ones(kernels.n_blocks)
    P = np.zeros((kernels.n_basis, labels.n_classes))
    current = objective(P, w, kernels, L, hp)
    previous = current

    trace: List[float] = []
    warnings: List[str] = []
    converged = False

    logger.info(
        f"Training RSTR: K={source.n_blocks}, d={source.dim}, Ns={source.n_samples}, "
        f"Nt={target.n_samples}, c={labels.n_classes}, lambda={hp.lam}, mu={hp.mu}, "
        f"gamma={hp.gamma}, kernel={hp.kernel.describe()}"
    )

    for outer in range(1, hp.outer_max_iters + 1):
        # Fix w, update P
        problem = PSubproblem.from_kernels(kernels, w, L, hp.mu, hp.gamma)
        p_result = solve_p_subproblem(problem, hp.ialm, P_init=P)
        if not p_result.converged:
            warnings.append(f"outer {outer}: P-step did not converge")
        candidate = objective(p_result.P, w, kernels, L, hp)
        if candidate <= current:
            P, current = p_result.P, candidate
        else:
            logger.debug(f"outer {outer}: P-step rejected ({candidate:.6g} > {current:.6g})")

        # Fix P, update w
        if not hp.fix_region_weights:
            lasso = build_w_design(P, kernels, L, hp.gamma, lam=hp.lam)
            w_result = solve_nonneg_lasso(lasso, w_init=w, max_sweeps=hp.lasso_max_sweeps)
            if not w_result.converged:
                warnings.append(f"outer {outer}: w-step did not converge")
            candidate = objective(P, w_result.w, kernels, L, hp)
            if candidate <= current:
                w, current = w_result.w, candidate
            else:
                logger.debug(
                    f"outer {outer}: w-step rejected ({candidate:.6g} > {current:.6g})"
                )

            # Fix the products w_i P, update their scale
            P_bal, w_bal = rebalance_scale(P, w, hp.lam, hp.mu)
            candidate = objective(P_bal, w_bal, kernels, L, hp)
            if candidate <= current:
                P, w, current = P_bal, w_bal, candidate

        trace.append(current)
        logger.debug(f"outer {outer}: objective={current:.10g}")
        if _relative_change(previous, current) < hp.outer_tol:
            converged = True
            break
        previous = current

    if not converged:
        logger.warning(f"RSTR stopped after {hp.outer_max_iters} outer iterations")
    logger.info(
        f"RSTR finished: {len(trace)} outer iterations, objective={current:.6g}, "
        f"active regions={int(np.count_nonzero(w))}/{w.size}"
    )

    return RstrModel(
        P=P,
        w=w,
        kernel=hp.kernel,
        train_source=source,
        train_target=target,
        class_names=labels.class_names,
        objective_trace=tuple(trace),
        converged=converged,
        hyperparams=hp,
        warnings=tuple(warnings),
    )


def predict(
    model: RstrModel,
    test: BlockedFeatureSet,
    kernel: Optional[KernelConfig] = None,
) -> PredictedLabels:
    """
    Project P^T sum_i w_i k_i^te onto the simplex and take the argmax per sample.

    Ties go to the lowest class index.

    Raises:
        KernelConfigMismatchError: If ``kernel`` differs from the training kernel
        DimensionMismatchError: If ``test`` has another block layout
    """
    cfg = kernel or model.kernel
    if cfg != model.kernel:
        raise KernelConfigMismatchError(
            f"model was trained with {model.kernel.describe()}, got {cfg.describe()}"
        )
    test_kernels = build_test_kernels(
        model.train_source, model.train_target, test, cfg, training_config=model.kernel
    )
    weighted = np.tensordot(model.w, test_kernels, axes=1)
    scores = model.P.T @ weighted
    label_vectors = project_simplex_columns(scores)
    hard_labels = np.argmax(label_vectors, axis=0)
    return PredictedLabels(label_vectors=label_vectors, hard_labels=hard_labels, scores=scores)
