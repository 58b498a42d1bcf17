"""JSON model artifacts for trained RSTR and baseline models."""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..core.baseline import BaselineModel
from ..core.kernels import BlockedFeatureSet, KernelConfig
from ..core.model import RstrHyperparams, RstrModel, _training_fingerprint
from ..errors import DataError, KernelConfigMismatchError
from .writer import JsonDocumentWriter


logger = logging.getLogger(__name__)

ARTIFACT_FORMAT = "rstr-cdmer-model v1"
AnyModel = Union[RstrModel, BaselineModel]


def _rstr_document(model: RstrModel, feature_files: Optional[Dict[str, str]]) -> Dict[str, Any]:
    return {
        "format": ARTIFACT_FORMAT,
        "method": "rstr",
        "class_names": list(model.class_names),
        "P": model.P.tolist(),
        "w": model.w.tolist(),
        "kernel": model.kernel.model_dump(),
        "hyperparams": model.hyperparams.model_dump(by_alias=True),
        "objective_trace": list(model.objective_trace),
        "converged": model.converged,
        "warnings": list(model.warnings),
        "training_fingerprint": model.training_fingerprint(),
        "feature_files": feature_files or {},
    }


def _baseline_document(model: BaselineModel) -> Dict[str, Any]:
    return {
        "format": ARTIFACT_FORMAT,
        "method": "baseline",
        "class_names": list(model.class_names),
        "C": model.C.tolist(),
        "ridge": model.ridge,
        "n_blocks": model.n_blocks,
        "dim": model.dim,
        "source_fingerprint": model.source_fingerprint,
    }


def save_model(
    path: Union[str, Path],
    model: AnyModel,
    feature_files: Optional[Dict[str, str]] = None,
) -> Path:
    """
    Atomically write a model artifact.

    RSTR artifacts do not embed the training features; ``feature_files`` records where the
    source and target sets were read from so they can be reloaded for prediction.
    """
    if isinstance(model, RstrModel):
        document = _rstr_document(model, feature_files)
    else:
        document = _baseline_document(model)
    written = JsonDocumentWriter(path).write(document)
    logger.info(f"Saved {document['method']} model to {written}")
    return written


def read_artifact(path: Union[str, Path]) -> Dict[str, Any]:
    """Load and check the header of an artifact without rebuilding the model."""
    try:
        document = JsonDocumentWriter(path).read()
    except ValueError as e:
        raise DataError(str(e)) from e
    if document.get("format") != ARTIFACT_FORMAT:
        raise DataError(f"{path} is not a {ARTIFACT_FORMAT} artifact")
    if document.get("method") not in ("rstr", "baseline"):
        raise DataError(f"{path}: unknown method {document.get('method')!r}")
    return document


def load_model(
    path: Union[str, Path],
    train_source: Optional[BlockedFeatureSet] = None,
    train_target: Optional[BlockedFeatureSet] = None,
) -> AnyModel:
    """
    Rebuild a model from its artifact.

    RSTR models need the training source and target sets again; their fingerprint must match
    the one stored at training time.

    Raises:
        DataError: If the artifact is malformed or the training sets are missing
        KernelConfigMismatchError: If the supplied training sets differ from the originals
    """
    document = read_artifact(path)
    class_names = tuple(document["class_names"])

    if document["method"] == "baseline":
        return BaselineModel(
            C=np.asarray(document["C"], dtype=np.float64),
            ridge=float(document["ridge"]),
            class_names=class_names,
            n_blocks=int(document["n_blocks"]),
            dim=int(document["dim"]),
            source_fingerprint=document.get("source_fingerprint", ""),
        )

    if train_source is None or train_target is None:
        raise DataError("RSTR artifacts need the training source and target sets")
    fingerprint = _training_fingerprint(train_source, train_target)
    if fingerprint != document["training_fingerprint"]:
        raise KernelConfigMismatchError(
            "training sets do not match the ones this model was trained on"
        )

    return RstrModel(
        P=np.asarray(document["P"], dtype=np.float64).reshape(-1, len(class_names)),
        w=np.asarray(document["w"], dtype=np.float64),
        kernel=KernelConfig(**document["kernel"]),
        train_source=train_source,
        train_target=train_target,
        class_names=class_names,
        objective_trace=tuple(float(v) for v in document["objective_trace"]),
        converged=bool(document["converged"]),
        hyperparams=RstrHyperparams.model_validate(document["hyperparams"]),
        warnings=tuple(document.get("warnings", ())),
    )
