"""Core numerics: kernels, solvers, the RSTR estimator, the baseline and metrics."""

from .baseline import BaselineModel, predict_baseline, train_baseline
from .kernels import BlockedFeatureSet, KernelConfig, KernelSet, build_kernel_set
from .metrics import ConfusionMatrix, accuracy, confusion, mean_f1
from .model import LabelMatrix, PredictedLabels, RstrHyperparams, RstrModel, predict, train

__all__ = [
    "BaselineModel",
    "BlockedFeatureSet",
    "ConfusionMatrix",
    "KernelConfig",
    "KernelSet",
    "LabelMatrix",
    "PredictedLabels",
    "RstrHyperparams",
    "RstrModel",
    "accuracy",
    "build_kernel_set",
    "confusion",
    "mean_f1",
    "predict",
    "predict_baseline",
    "train",
    "train_baseline",
]
