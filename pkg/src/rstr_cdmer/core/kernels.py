"""Block-structured feature sets and the kernel matrices RSTR is built on."""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.spatial.distance import cdist, pdist

from ..errors import DataError, DimensionMismatchError, KernelConfigMismatchError


logger = logging.getLogger(__name__)

DomainTag = Literal["source", "target", "test"]
MEDIAN_HEURISTIC = "median-heuristic"


@dataclass(frozen=True)
class BlockedFeatureSet:
    """
    N samples described by K per-region descriptor blocks of dimension d.

    ``blocks`` has shape (K, d, N): ``blocks[i]`` is the d x N matrix X_i holding the
    descriptor of region i for every sample. Stacking the blocks row-wise gives the
    full (K*d) x N feature matrix.
    """

    blocks: np.ndarray
    domain_tag: DomainTag = "source"
    sample_ids: Tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        blocks = np.array(self.blocks, dtype=np.float64, copy=True)
        if blocks.ndim != 3:
            raise DimensionMismatchError(
                f"blocks must have shape (K, d, N), got {blocks.shape}"
            )
        n_blocks, dim, n_samples = blocks.shape
        if n_blocks < 1 or dim < 1 or n_samples < 1:
            raise DimensionMismatchError(
                f"K, d and N must all be >= 1, got K={n_blocks} d={dim} N={n_samples}"
            )
        if not np.all(np.isfinite(blocks)):
            raise DataError("feature blocks contain non-finite values")
        if self.domain_tag not in ("source", "target", "test"):
            raise ValueError(f"Unknown domain tag: {self.domain_tag}")

        sample_ids = tuple(str(s) for s in self.sample_ids)
        if not sample_ids:
            sample_ids = tuple(f"{self.domain_tag}-{j}" for j in range(n_samples))
        if len(sample_ids) != n_samples:
            raise DimensionMismatchError(
                f"{len(sample_ids)} sample ids given for {n_samples} samples"
            )

        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "sample_ids", sample_ids)

    @classmethod
    def from_stacked(
        cls,
        features: np.ndarray,
        n_blocks: int,
        domain_tag: DomainTag = "source",
        sample_ids: Sequence[str] = (),
    ) -> "BlockedFeatureSet":
        """Split a (K*d) x N stacked feature matrix into K equal blocks."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or n_blocks < 1 or features.shape[0] % n_blocks:
            raise DimensionMismatchError(
                f"cannot split {features.shape} into {n_blocks} equal blocks"
            )
        dim = features.shape[0] // n_blocks
        blocks = features.reshape(n_blocks, dim, features.shape[1])
        return cls(blocks=blocks, domain_tag=domain_tag, sample_ids=tuple(sample_ids))

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def dim(self) -> int:
        return self.blocks.shape[1]

    @property
    def n_samples(self) -> int:
        return self.blocks.shape[2]

    def stacked(self) -> np.ndarray:
        """Return the (K*d) x N matrix x = [x_1; ...; x_K] per column."""
        return self.blocks.reshape(self.n_blocks * self.dim, self.n_samples)

    def with_tag(self, domain_tag: DomainTag) -> "BlockedFeatureSet":
        """Return the same samples under another domain tag."""
        return BlockedFeatureSet(
            blocks=self.blocks, domain_tag=domain_tag, sample_ids=self.sample_ids
        )

    def select(self, indices: Sequence[int]) -> "BlockedFeatureSet":
        """Return the subset of samples at ``indices`` (in that order)."""
        idx = np.asarray(indices, dtype=int)
        return BlockedFeatureSet(
            blocks=self.blocks[:, :, idx],
            domain_tag=self.domain_tag,
            sample_ids=tuple(self.sample_ids[i] for i in idx),
        )

    def fingerprint(self) -> str:
        """SHA-256 over the block shape and float64 bytes."""
        digest = hashlib.sha256()
        digest.update(np.asarray(self.blocks.shape, dtype=np.int64).tobytes())
        digest.update(np.ascontiguousarray(self.blocks, dtype=np.float64).tobytes())
        return digest.hexdigest()


class KernelConfig(BaseModel):
    """Kernel function k(a, b) shared by training and prediction."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["linear", "polynomial", "gaussian"] = "linear"
    degree: int = Field(default=2, ge=1, description="Polynomial degree")
    offset: float = Field(default=1.0, description="Polynomial offset")
    bandwidth: Union[float, Literal["median-heuristic"]] = Field(
        default=MEDIAN_HEURISTIC,
        description="Gaussian bandwidth sigma, or 'median-heuristic'",
    )

    @field_validator("bandwidth")
    @classmethod
    def validate_bandwidth(cls, value: Union[float, str]) -> Union[float, str]:
        if isinstance(value, str):
            return value
        if not np.isfinite(value) or value <= 0:
            raise ValueError("bandwidth must be a positive finite number")
        return float(value)

    def describe(self) -> str:
        if self.kind == "polynomial":
            return f"polynomial(degree={self.degree}, offset={self.offset})"
        if self.kind == "gaussian":
            return f"gaussian(bandwidth={self.bandwidth})"
        return "linear"


def median_bandwidth(basis: np.ndarray) -> float:
    """
    Median of the pairwise Euclidean distances among the columns of ``basis``.

    Returns 1.0 when the median is zero or there is a single column.
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape[1] < 2:
        return 1.0
    median = float(np.median(pdist(basis.T, metric="euclidean")))
    return median if median > 0 else 1.0


def resolve_bandwidth(cfg: KernelConfig, basis: np.ndarray) -> Optional[float]:
    """Numeric Gaussian bandwidth for ``cfg`` against ``basis``; None for other kernels."""
    if cfg.kind != "gaussian":
        return None
    if cfg.bandwidth == MEDIAN_HEURISTIC:
        return median_bandwidth(basis)
    return float(cfg.bandwidth)


def gram(
    A: np.ndarray,
    B: np.ndarray,
    cfg: KernelConfig,
    bandwidth: Optional[float] = None,
) -> np.ndarray:
    """
    Kernel matrix between the columns of A (d x m) and B (d x n).

    Args:
        A: Left sample matrix, one sample per column
        B: Right sample matrix, one sample per column
        cfg: Kernel configuration
        bandwidth: Pre-resolved Gaussian bandwidth. When None and ``cfg`` asks for the
            median heuristic, the median is taken over the columns of A.

    Returns:
        m x n matrix with entry (p, q) = k(a_p, b_q)

    Raises:
        DimensionMismatchError: If A and B differ in row dimension
        DataError: If an input holds non-finite values
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatchError(
            f"row dimensions differ: {A.shape[0]} vs {B.shape[0]}"
        )
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
        raise DataError("kernel inputs contain non-finite values")

    if cfg.kind == "linear":
        return A.T @ B
    if cfg.kind == "polynomial":
        return (A.T @ B + cfg.offset) ** cfg.degree

    sigma = bandwidth if bandwidth is not None else resolve_bandwidth(cfg, A)
    sq_dist = cdist(A.T, B.T, metric="sqeuclidean")
    return np.exp(-sq_dist / (2.0 * sigma**2))


@dataclass(frozen=True)
class KernelSet:
    """
    Per-block kernels K_i^s and K_i^t against the joined [source, target] basis.

    ``per_block_source`` has shape (K, Ns+Nt, Ns) and ``per_block_target`` shape
    (K, Ns+Nt, Nt). ``bandwidths`` holds the resolved Gaussian bandwidth of each block
    (None entries for the other kernels).
    """

    per_block_source: np.ndarray
    per_block_target: np.ndarray
    config: KernelConfig
    bandwidths: Tuple[Optional[float], ...]

    @property
    def n_blocks(self) -> int:
        return self.per_block_source.shape[0]

    @property
    def n_source(self) -> int:
        return self.per_block_source.shape[2]

    @property
    def n_target(self) -> int:
        return self.per_block_target.shape[2]

    @property
    def n_basis(self) -> int:
        return self.per_block_source.shape[1]

    def mean_gaps(self) -> np.ndarray:
        """K x (Ns+Nt) matrix; row i is (1/Ns) K_i^s 1_s - (1/Nt) K_i^t 1_t."""
        return self.per_block_source.mean(axis=2) - self.per_block_target.mean(axis=2)

    def combine(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (sum_i w_i K_i^s, sum_i w_i mean_gap_i) for region weights ``w``."""
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (self.n_blocks,):
            raise DimensionMismatchError(
                f"expected {self.n_blocks} region weights, got shape {w.shape}"
            )
        ks_tilde = np.tensordot(w, self.per_block_source, axes=1)
        kst_tilde = w @ self.mean_gaps()
        return ks_tilde, kst_tilde


def check_compatible(first: BlockedFeatureSet, second: BlockedFeatureSet) -> None:
    """Raise unless both sets share the block count K and block dimension d."""
    if first.n_blocks != second.n_blocks or first.dim != second.dim:
        raise DimensionMismatchError(
            f"block layout mismatch: K={first.n_blocks}, d={first.dim} "
            f"vs K={second.n_blocks}, d={second.dim}"
        )


def _joined_block(
    source: BlockedFeatureSet, target: BlockedFeatureSet, index: int
) -> np.ndarray:
    return np.hstack([source.blocks[index], target.blocks[index]])


def build_kernel_set(
    source: BlockedFeatureSet, target: BlockedFeatureSet, cfg: KernelConfig
) -> KernelSet:
    """
    Build K_i^s = k([X_i^s | X_i^t], X_i^s) and K_i^t = k([X_i^s | X_i^t], X_i^t).

    Raises:
        DimensionMismatchError: If the sets differ in K or d
        ValueError: If the domain tags are not source/target
    """
    if source.domain_tag != "source" or target.domain_tag != "target":
        raise ValueError(
            f"expected source/target tags, got {source.domain_tag}/{target.domain_tag}"
        )
    check_compatible(source, target)

    n_source = source.n_samples
    per_source: List[np.ndarray] = []
    per_target: List[np.ndarray] = []
    bandwidths: List[Optional[float]] = []

    for i in range(source.n_blocks):
        basis = _joined_block(source, target, i)
        sigma = resolve_bandwidth(cfg, basis)
        full = gram(basis, basis, cfg, bandwidth=sigma)
        per_source.append(full[:, :n_source])
        per_target.append(full[:, n_source:])
        bandwidths.append(sigma)

    logger.debug(
        f"Built {source.n_blocks} {cfg.describe()} kernel blocks over "
        f"{n_source}+{target.n_samples} basis samples"
    )
    return KernelSet(
        per_block_source=np.stack(per_source),
        per_block_target=np.stack(per_target),
        config=cfg,
        bandwidths=tuple(bandwidths),
    )


def build_test_kernels(
    source: BlockedFeatureSet,
    target: BlockedFeatureSet,
    test: BlockedFeatureSet,
    cfg: KernelConfig,
    training_config: Optional[KernelConfig] = None,
) -> np.ndarray:
    """
    Kernels between the training basis and test samples, one (Ns+Nt) x Ntest per block.

    Args:
        source: Training source set
        target: Training target set
        test: Samples to evaluate
        cfg: Kernel configuration to evaluate with
        training_config: Configuration the model was trained with; must equal ``cfg``

    Returns:
        Array of shape (K, Ns+Nt, Ntest)

    Raises:
        KernelConfigMismatchError: If ``cfg`` differs from ``training_config``
        DimensionMismatchError: If the three sets differ in K or d
    """
    if training_config is not None and training_config != cfg:
        raise KernelConfigMismatchError(
            f"kernel {cfg.describe()} differs from training kernel "
            f"{training_config.describe()}"
        )
    check_compatible(source, target)
    check_compatible(source, test)

    out = []
    for i in range(source.n_blocks):
        basis = _joined_block(source, target, i)
        sigma = resolve_bandwidth(cfg, basis)
        out.append(gram(basis, test.blocks[i], cfg, bandwidth=sigma))
    return np.stack(out)
