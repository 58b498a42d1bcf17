"""No-adaptation reference: ridge-stabilized linear regression on source data only."""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..errors import DimensionMismatchError
from .kernels import BlockedFeatureSet
from .model import LabelMatrix, PredictedLabels
from .optimizer import project_simplex_columns


logger = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class BaselineModel:
    """D x c coefficients over the stacked feature space (D = K*d)."""

    C: np.ndarray
    ridge: float
    class_names: Tuple[str, ...]
    n_blocks: int
    dim: int
    source_fingerprint: str = ""

    def __post_init__(self) -> None:
        if self.ridge <= 0:
            raise ValueError("ridge must be positive")
        if not np.all(np.isfinite(self.C)):
            raise ValueError("baseline coefficients must be finite")
        if self.C.shape != (self.n_blocks * self.dim, len(self.class_names)):
            raise DimensionMismatchError(
                f"C has shape {self.C.shape}, expected "
                f"{(self.n_blocks * self.dim, len(self.class_names))}"
            )


def train_baseline(
    source: BlockedFeatureSet,
    labels: LabelMatrix,
    ridge: float = DEFAULT_RIDGE,
) -> BaselineModel:
    """
    C = (X X^T + ridge I)^-1 X L^T over the stacked source features.

    When there are fewer samples than features the equivalent dual form
    C = X (X^T X + ridge I)^-1 L^T is solved instead.
    """
    if ridge <= 0:
        raise ValueError("ridge must be positive")
    if labels.n_samples != source.n_samples:
        raise DimensionMismatchError(
            f"{labels.n_samples} labels for {source.n_samples} source samples"
        )

    X = source.stacked()
    L = labels.onehot
    n_features, n_samples = X.shape

    if n_samples < n_features:
        factor = cho_factor(X.T @ X + ridge * np.eye(n_samples), lower=True)
        C = X @ cho_solve(factor, L.T)
    else:
        factor = cho_factor(X @ X.T + ridge * np.eye(n_features), lower=True)
        C = cho_solve(factor, X @ L.T)

    logger.info(
        f"Trained regression baseline on {n_samples} source samples "
        f"({n_features} stacked features, ridge={ridge})"
    )
    return BaselineModel(
        C=C,
        ridge=ridge,
        class_names=labels.class_names,
        n_blocks=source.n_blocks,
        dim=source.dim,
        source_fingerprint=source.fingerprint(),
    )


def predict_baseline(model: BaselineModel, test: BlockedFeatureSet) -> PredictedLabels:
    """Hard label = argmax of C^T x (ties toward the lowest index)."""
    if test.n_blocks != model.n_blocks or test.dim != model.dim:
        raise DimensionMismatchError(
            f"test layout K={test.n_blocks}, d={test.dim} does not match "
            f"baseline K={model.n_blocks}, d={model.dim}"
        )
    scores = model.C.T @ test.stacked()
    return PredictedLabels(
        label_vectors=project_simplex_columns(scores),
        hard_labels=np.argmax(scores, axis=0),
        scores=scores,
    )
