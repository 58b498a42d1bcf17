"""Data-io, protocol catalogue, synthetic data, artifacts, evaluation harness and verification."""

from .features import DatasetManifest, load_features, read_features, save_features
from .protocol import BUILTIN_DATASETS, TaskSpec, builtin_protocol, load_protocol
from .synthetic import SyntheticShiftConfig, generate_domain_family, generate_synthetic

__all__ = [
    "BUILTIN_DATASETS",
    "DatasetManifest",
    "SyntheticShiftConfig",
    "TaskSpec",
    "builtin_protocol",
    "generate_domain_family",
    "generate_synthetic",
    "load_features",
    "load_protocol",
    "read_features",
    "save_features",
]
