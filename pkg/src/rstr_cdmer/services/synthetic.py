"""
Seeded synthetic domain-shift data.

Every draw comes from ``numpy.random.default_rng(seed)`` (PCG64) in a fixed order:

1. class means of each informative block, in block order: the first c columns of an
   orthonormal basis (QR of a standard normal d x c matrix) scaled by
   ``class_separation / sqrt(2)``, so every pair of class means is ``class_separation``
   apart (random unit directions when d < c);
2. one shift direction per block, a standard normal d-vector normalized to unit length;
3. source labels, then target labels (balanced, shuffled);
4. unit-variance Gaussian noise for the source blocks, then for the target blocks.

Informative blocks add the class mean of each sample to the noise, noise blocks carry no
class signal. Every target block is translated by ``shift_magnitude`` along its shift
direction.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.kernels import BlockedFeatureSet, DomainTag
from ..core.model import LabelMatrix
from ..errors import ConfigError
from .features import DatasetManifest


logger = logging.getLogger(__name__)


class SyntheticShiftConfig(BaseModel):
    """Shape and shift of one synthetic source/target pair."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0)
    n_classes: int = Field(default=3, ge=2)
    n_blocks: int = Field(default=6, ge=1)
    dim: int = Field(default=8, ge=1)
    n_source: int = Field(default=90, ge=1)
    n_target: int = Field(default=90, ge=1)
    class_separation: float = Field(default=3.0, ge=0)
    shift_magnitude: float = Field(default=2.0, ge=0)
    informative_blocks: Tuple[int, ...] = (0, 1)
    class_names: Optional[Tuple[str, ...]] = None

    @model_validator(mode="after")
    def check_blocks(self) -> "SyntheticShiftConfig":
        if not self.informative_blocks:
            raise ValueError("at least one informative block is required")
        if len(set(self.informative_blocks)) != len(self.informative_blocks):
            raise ValueError("informative blocks must be distinct")
        for index in self.informative_blocks:
            if not 0 <= index < self.n_blocks:
                raise ValueError(f"informative block {index} outside [0, {self.n_blocks})")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise ValueError(
                f"{len(self.class_names)} class names for {self.n_classes} classes"
            )
        return self

    @property
    def noise_blocks(self) -> Tuple[int, ...]:
        return tuple(i for i in range(self.n_blocks) if i not in self.informative_blocks)

    @property
    def resolved_class_names(self) -> Tuple[str, ...]:
        return self.class_names or tuple(f"class{k}" for k in range(self.n_classes))


@dataclass(frozen=True)
class SyntheticTask:
    """Labeled source, unlabeled target and the target labels kept for scoring only."""

    source: BlockedFeatureSet
    source_labels: LabelMatrix
    target: BlockedFeatureSet
    target_labels: LabelMatrix
    config: SyntheticShiftConfig


def _class_means(rng: np.random.Generator, cfg: SyntheticShiftConfig) -> Dict[int, np.ndarray]:
    scale = cfg.class_separation / np.sqrt(2.0)
    means = {}
    for block in sorted(cfg.informative_blocks):
        draw = rng.standard_normal((cfg.dim, cfg.n_classes))
        if cfg.dim >= cfg.n_classes:
            basis, _ = np.linalg.qr(draw)
        else:
            basis = draw / np.linalg.norm(draw, axis=0, keepdims=True)
        means[block] = scale * basis[:, : cfg.n_classes]
    return means


def _shift_directions(rng: np.random.Generator, n_blocks: int, dim: int) -> np.ndarray:
    directions = rng.standard_normal((n_blocks, dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    return directions / np.where(norms > 0, norms, 1.0)


def _balanced_labels(rng: np.random.Generator, n_samples: int, n_classes: int) -> np.ndarray:
    return rng.permutation(np.arange(n_samples) % n_classes)


def _counted_labels(rng: np.random.Generator, counts: List[int]) -> np.ndarray:
    return rng.permutation(np.repeat(np.arange(len(counts)), counts))


def _draw_blocks(
    rng: np.random.Generator,
    cfg: SyntheticShiftConfig,
    labels: np.ndarray,
    means: Dict[int, np.ndarray],
    shift: Optional[np.ndarray],
) -> np.ndarray:
    blocks = rng.standard_normal((cfg.n_blocks, cfg.dim, labels.size))
    for block, block_means in means.items():
        blocks[block] += block_means[:, labels]
    if shift is not None:
        blocks += cfg.shift_magnitude * shift[:, :, None]
    return blocks


def generate_synthetic(cfg: SyntheticShiftConfig) -> SyntheticTask:
    """Draw one shifted source/target pair; identical seeds give bitwise-identical output."""
    rng = np.random.default_rng(cfg.seed)
    means = _class_means(rng, cfg)
    shift = _shift_directions(rng, cfg.n_blocks, cfg.dim)
    source_ids = _balanced_labels(rng, cfg.n_source, cfg.n_classes)
    target_ids = _balanced_labels(rng, cfg.n_target, cfg.n_classes)

    source_blocks = _draw_blocks(rng, cfg, source_ids, means, shift=None)
    target_blocks = _draw_blocks(rng, cfg, target_ids, means, shift=shift)

    names = cfg.resolved_class_names
    logger.debug(
        f"Generated synthetic task seed={cfg.seed}: K={cfg.n_blocks}, d={cfg.dim}, "
        f"Ns={cfg.n_source}, Nt={cfg.n_target}, informative={cfg.informative_blocks}"
    )
    return SyntheticTask(
        source=BlockedFeatureSet(blocks=source_blocks, domain_tag="source"),
        source_labels=LabelMatrix.from_indices(source_ids, names),
        target=BlockedFeatureSet(blocks=target_blocks, domain_tag="target"),
        target_labels=LabelMatrix.from_indices(target_ids, names),
        config=cfg,
    )


def generate_domain_family(
    cfg: SyntheticShiftConfig,
    manifests: Mapping[str, DatasetManifest],
    domain_tag: DomainTag = "source",
) -> Dict[str, Tuple[BlockedFeatureSet, LabelMatrix]]:
    """
    Draw stand-in datasets that share one class structure but each have their own shift.

    The class means come from ``cfg.seed``; dataset number ``i`` (in sorted id order) draws
    its shift direction, labels and noise from ``default_rng([cfg.seed, i + 1])``. Sample
    counts per class are taken from each manifest's ``class_counts``.

    Raises:
        ConfigError: If a manifest has no class counts or the class names disagree
    """
    if not manifests:
        raise ConfigError("no datasets to generate")
    class_names: Optional[Tuple[str, ...]] = None
    for dataset_id, manifest in manifests.items():
        if not manifest.class_counts:
            raise ConfigError(f"dataset {dataset_id} has no class counts")
        names = tuple(manifest.class_counts)
        if class_names is None:
            class_names = names
        elif names != class_names:
            raise ConfigError(
                f"dataset {dataset_id} has classes {names}, expected {class_names}"
            )
    assert class_names is not None

    shared = cfg.model_copy(update={"n_classes": len(class_names), "class_names": class_names})
    means = _class_means(np.random.default_rng(cfg.seed), shared)

    family = {}
    for index, dataset_id in enumerate(sorted(manifests)):
        rng = np.random.default_rng([cfg.seed, index + 1])
        shift = _shift_directions(rng, shared.n_blocks, shared.dim)
        labels = _counted_labels(rng, list(manifests[dataset_id].class_counts.values()))
        blocks = _draw_blocks(rng, shared, labels, means, shift=shift)
        family[dataset_id] = (
            BlockedFeatureSet(
                blocks=blocks,
                domain_tag=domain_tag,
                sample_ids=tuple(f"{dataset_id}-{j}" for j in range(labels.size)),
            ),
            LabelMatrix.from_indices(labels, class_names),
        )
        logger.debug(f"Generated stand-in dataset {dataset_id} with {labels.size} samples")
    return family
