"""Mean F1-score, Accuracy and the confusion matrix they are computed from."""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score, precision_recall_fscore_support

from ..errors import DimensionMismatchError


@dataclass(frozen=True)
class ConfusionMatrix:
    """c x c counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DimensionMismatchError(f"confusion matrix must be square, got {counts.shape}")
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def samples(self) -> Tuple[np.ndarray, np.ndarray]:
        """(truths, preds) arrays with one entry per counted pair."""
        c = self.n_classes
        flat = self.counts.reshape(-1)
        truths = np.repeat(np.repeat(np.arange(c), c), flat)
        preds = np.repeat(np.tile(np.arange(c), c), flat)
        return truths, preds


def _check_labels(preds: Sequence[int], truths: Sequence[int], c: int) -> Tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    truths = np.asarray(truths, dtype=np.int64).reshape(-1)
    if preds.shape != truths.shape:
        raise DimensionMismatchError(
            f"{preds.size} predictions for {truths.size} ground-truth labels"
        )
    for name, values in (("prediction", preds), ("label", truths)):
        if values.size and (values.min() < 0 or values.max() >= c):
            raise ValueError(f"{name} out of range [0, {c})")
    return preds, truths


def confusion(preds: Sequence[int], truths: Sequence[int], c: int) -> ConfusionMatrix:
    """Count (true, predicted) pairs."""
    preds, truths = _check_labels(preds, truths, c)
    if preds.size == 0:
        return ConfusionMatrix(counts=np.zeros((c, c), dtype=np.int64))
    return ConfusionMatrix(counts=confusion_matrix(truths, preds, labels=np.arange(c)))


def per_class_scores(cm: ConfusionMatrix) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Precision, recall and F1 per class.

    Precision (recall) is 0 for a class never predicted (never present); F1 is 0 when
    precision + recall is 0.
    """
    if cm.total == 0:
        zeros = np.zeros(cm.n_classes)
        return zeros, zeros.copy(), zeros.copy()
    truths, preds = cm.samples()
    precision, recall, f1, _ = precision_recall_fscore_support(
        truths, preds, labels=np.arange(cm.n_classes), average=None, zero_division=0
    )
    return precision, recall, f1


def _macro_f1(truths: np.ndarray, preds: np.ndarray, c: int) -> float:
    if c < 2:
        raise ValueError("mean F1 needs at least two classes")
    if truths.size == 0:
        return 0.0
    return float(f1_score(truths, preds, labels=np.arange(c), average="macro", zero_division=0))


def _accuracy_percent(truths: np.ndarray, preds: np.ndarray) -> float:
    if truths.size == 0:
        raise ValueError("accuracy of an empty confusion matrix is undefined")
    return 100.0 * float(accuracy_score(truths, preds))


def mean_f1(cm: ConfusionMatrix) -> float:
    """Average of the per-class F1 over all c classes."""
    truths, preds = cm.samples()
    return _macro_f1(truths, preds, cm.n_classes)


def accuracy(cm: ConfusionMatrix) -> float:
    """100 * trace / total."""
    truths, preds = cm.samples()
    return _accuracy_percent(truths, preds)


def score(preds: Sequence[int], truths: Sequence[int], c: int) -> Tuple[float, float, ConfusionMatrix]:
    """Return (mean F1, accuracy, confusion matrix)."""
    preds, truths = _check_labels(preds, truths, c)
    cm = confusion(preds, truths, c)
    return _macro_f1(truths, preds, c), _accuracy_percent(truths, preds), cm
