"""
Feature-set ingestion and serialization in the ``cdmer-features v1`` text format.

Grammar::

    #cdmer-features v1 K=<k> d=<d> N=<n> classes=<c1,c2,...>
    [<label>] <v_1> <v_2> ... <v_{K*d}>      (N sample lines)

Values are block-major (the d values of block 1, then block 2, ...), separated by single
spaces and written in shortest round-trip form. The label token is present on every
sample line or on none. ``classes=`` may be empty for unlabeled sets.
"""

import logging
import math
import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.kernels import BlockedFeatureSet, DomainTag
from ..core.model import LabelMatrix
from ..errors import FeatureFileError
from .writer import atomic_write_text


logger = logging.getLogger(__name__)

FORMAT_TAG = "#cdmer-features v1"
_HEADER_RE = re.compile(
    r"^#cdmer-features v1 K=(?P<K>\d+) d=(?P<d>\d+) N=(?P<N>\d+) classes=(?P<classes>\S*)$"
)
DEFAULT_GRIDS: Tuple[int, ...] = (1, 2, 3, 4)


class DatasetManifest(BaseModel):
    """Where a dataset's features live and what they are expected to contain."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    dataset_id: str
    name: Optional[str] = None
    class_counts: Dict[str, int] = Field(default_factory=dict)
    n_blocks: Optional[int] = Field(default=None, ge=1, alias="K")
    dim: Optional[int] = Field(default=None, ge=1, alias="d")
    n_samples: Optional[int] = Field(default=None, ge=1, alias="N")
    feature_file: Optional[Path] = None

    @model_validator(mode="after")
    def check_counts(self) -> "DatasetManifest":
        if any(count < 0 for count in self.class_counts.values()):
            raise ValueError("class counts must be non-negative")
        if self.class_counts:
            total = sum(self.class_counts.values())
            if self.n_samples is None:
                self.n_samples = total
            elif total != self.n_samples:
                raise ValueError(
                    f"class counts sum to {total} but N={self.n_samples} "
                    f"for dataset {self.dataset_id}"
                )
        return self

    @property
    def display_name(self) -> str:
        return self.name or self.dataset_id


def _parse_header(line: str) -> Tuple[int, int, int, List[str]]:
    match = _HEADER_RE.match(line.rstrip("\r\n"))
    if not match:
        raise FeatureFileError(f"malformed header, expected '{FORMAT_TAG} K=.. d=.. N=.. classes=..'", row=0)
    classes = [c for c in match.group("classes").split(",") if c]
    if len(set(classes)) != len(classes):
        raise FeatureFileError("duplicate class names in header", row=0)
    return int(match.group("K")), int(match.group("d")), int(match.group("N")), classes


def read_features(
    path: Union[str, Path],
    domain_tag: DomainTag = "source",
) -> Tuple[BlockedFeatureSet, Optional[LabelMatrix]]:
    """
    Parse a feature file.

    Returns:
        The feature set and, when every sample line carries a label, the label matrix

    Raises:
        FeatureFileError: On any format violation; the message names the offending row
    """
    path = Path(path)
    if not path.exists():
        raise FeatureFileError(f"feature file not found: {path}")

    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    if not lines:
        raise FeatureFileError("empty file, missing header", row=0)

    n_blocks, dim, n_samples, classes = _parse_header(lines[0])
    if n_samples == 0:
        raise FeatureFileError("empty dataset")
    if n_blocks < 1 or dim < 1:
        raise FeatureFileError("K and d must be positive", row=0)

    width = n_blocks * dim
    class_index = {name: i for i, name in enumerate(classes)}
    values = np.empty((n_samples, width))
    label_ids: List[int] = []
    labeled: Optional[bool] = None
    sample = 0

    for row, line in enumerate(lines[1:], start=1):
        tokens = line.split()
        if not tokens:
            continue
        if sample >= n_samples:
            raise FeatureFileError(f"more than the declared N={n_samples} samples", row=row)

        if len(tokens) == width + 1:
            has_label = True
        elif len(tokens) == width:
            has_label = False
        else:
            raise FeatureFileError(
                f"expected {width} values (K={n_blocks} x d={dim}), got {len(tokens)} tokens",
                row=row,
            )
        if labeled is None:
            labeled = has_label
        elif labeled != has_label:
            raise FeatureFileError("label token present on some rows only", row=row)

        if has_label:
            label = tokens[0]
            if label not in class_index:
                raise FeatureFileError(f"unknown class name '{label}'", row=row)
            label_ids.append(class_index[label])
            tokens = tokens[1:]

        for col, token in enumerate(tokens):
            try:
                value = float(token)
            except ValueError:
                raise FeatureFileError(f"cannot parse value '{token}'", row=row)
            if not math.isfinite(value):
                raise FeatureFileError(f"non-finite value '{token}'", row=row)
            values[sample, col] = value
        sample += 1

    if sample != n_samples:
        raise FeatureFileError(f"header declares N={n_samples} but file holds {sample} samples")

    features = BlockedFeatureSet.from_stacked(values.T, n_blocks, domain_tag=domain_tag)
    labels = None
    if labeled:
        labels = LabelMatrix.from_indices(label_ids, classes)

    logger.debug(
        f"Loaded {n_samples} samples (K={n_blocks}, d={dim}, labeled={bool(labeled)}) from {path}"
    )
    return features, labels


def load_features(
    manifest: DatasetManifest,
    domain_tag: DomainTag = "source",
) -> Tuple[BlockedFeatureSet, Optional[LabelMatrix]]:
    """
    Load the manifest's feature file and check it against the manifest.

    Raises:
        FeatureFileError: If the file is missing, malformed or disagrees with the manifest
    """
    if manifest.feature_file is None:
        raise FeatureFileError(f"dataset {manifest.dataset_id} has no feature file")
    features, labels = read_features(manifest.feature_file, domain_tag=domain_tag)

    expected = {
        "K": (manifest.n_blocks, features.n_blocks),
        "d": (manifest.dim, features.dim),
        "N": (manifest.n_samples, features.n_samples),
    }
    for key, (declared, found) in expected.items():
        if declared is not None and declared != found:
            raise FeatureFileError(
                f"dataset {manifest.dataset_id}: manifest declares {key}={declared}, "
                f"file holds {key}={found}"
            )
    return features, labels


def format_features(
    features: BlockedFeatureSet,
    labels: Optional[LabelMatrix] = None,
    class_names: Sequence[str] = (),
) -> str:
    """Render a feature set (and optional labels) in the v1 text format."""
    if labels is not None:
        if labels.n_samples != features.n_samples:
            raise ValueError(
                f"{labels.n_samples} labels for {features.n_samples} samples"
            )
        class_names = labels.class_names
    for name in class_names:
        if not name or "," in name or any(ch.isspace() for ch in name):
            raise ValueError(f"class name '{name}' cannot be written to the header")

    header = (
        f"{FORMAT_TAG} K={features.n_blocks} d={features.dim} "
        f"N={features.n_samples} classes={','.join(class_names)}"
    )
    stacked = features.stacked()
    names = [labels.class_names[i] for i in labels.indices] if labels is not None else None

    lines = [header]
    for j in range(features.n_samples):
        row = " ".join(repr(float(v)) for v in stacked[:, j])
        lines.append(f"{names[j]} {row}" if names is not None else row)
    return "\n".join(lines) + "\n"


def save_features(
    path: Union[str, Path],
    features: BlockedFeatureSet,
    labels: Optional[LabelMatrix] = None,
    class_names: Sequence[str] = (),
) -> Path:
    """Atomically write a feature file; reloading yields bit-identical blocks and labels."""
    return atomic_write_text(path, format_features(features, labels, class_names))


def multiscale_block_count(grids: Sequence[int] = DEFAULT_GRIDS) -> int:
    """Number of facial blocks produced by a set of g x g grids."""
    return int(sum(g * g for g in grids))


def describe_block(index: int, grids: Sequence[int] = DEFAULT_GRIDS) -> str:
    """
    Name the grid cell a block index refers to, e.g. ``"3x3 cell (0,1)"``.

    Blocks are numbered grid by grid (coarsest first), row-major inside each grid.
    """
    if index < 0:
        raise IndexError(f"block index {index} out of range")
    offset = index
    for g in grids:
        if offset < g * g:
            return f"{g}x{g} cell ({offset // g},{offset % g})"
        offset -= g * g
    raise IndexError(
        f"block index {index} out of range for grids {tuple(grids)} "
        f"({multiscale_block_count(grids)} blocks)"
    )
