"""Tests for the seeded synthetic domain-shift generator."""

import numpy as np
import pytest
from pydantic import ValidationError

from rstr_cdmer.core.baseline import predict_baseline, train_baseline
from rstr_cdmer.core.kernels import KernelConfig
from rstr_cdmer.core.metrics import accuracy, confusion
from rstr_cdmer.core.model import mmd
from rstr_cdmer.errors import ConfigError
from rstr_cdmer.services.features import DatasetManifest
from rstr_cdmer.services.protocol import BUILTIN_DATASETS
from rstr_cdmer.services.synthetic import SyntheticShiftConfig, generate_domain_family, generate_synthetic


class TestGenerateSynthetic:
    """Tests for one source/target pair."""

    def test_same_seed_is_bitwise_identical(self) -> None:
        """Two draws with one seed agree bit for bit."""
        cfg = SyntheticShiftConfig(seed=5)
        first, second = generate_synthetic(cfg), generate_synthetic(cfg)
        np.testing.assert_array_equal(first.source.blocks, second.source.blocks)
        np.testing.assert_array_equal(first.target.blocks, second.target.blocks)
        np.testing.assert_array_equal(first.source_labels.onehot, second.source_labels.onehot)
        np.testing.assert_array_equal(first.target_labels.onehot, second.target_labels.onehot)

    def test_different_seeds_differ(self) -> None:
        """Another seed gives other data."""
        first = generate_synthetic(SyntheticShiftConfig(seed=1))
        second = generate_synthetic(SyntheticShiftConfig(seed=2))
        assert not np.array_equal(first.source.blocks, second.source.blocks)

    def test_shapes_and_balance(self) -> None:
        """Layout follows the config and labels are balanced."""
        task = generate_synthetic(SyntheticShiftConfig(n_blocks=4, dim=3, n_source=30, n_target=21))
        assert task.source.blocks.shape == (4, 3, 30)
        assert task.target.blocks.shape == (4, 3, 21)
        assert task.source.domain_tag == "source" and task.target.domain_tag == "target"
        np.testing.assert_array_equal(task.source_labels.onehot.sum(axis=1), [10, 10, 10])
        np.testing.assert_array_equal(task.target_labels.onehot.sum(axis=1), [7, 7, 7])
        assert task.source_labels.class_names == ("class0", "class1", "class2")

    def test_no_shift_small_mmd(self) -> None:
        """Without shift the per-block linear MMD is below 0.1 * class_separation at N=2000."""
        cfg = SyntheticShiftConfig(seed=0, n_blocks=2, dim=8, n_source=2000, n_target=2000, shift_magnitude=0.0)
        task = generate_synthetic(cfg)
        for i in range(cfg.n_blocks):
            gap = mmd(task.source.blocks[i], task.target.blocks[i], KernelConfig())
            assert gap < 0.1 * cfg.class_separation

    def test_shift_moves_target(self) -> None:
        """A noise block of the target is translated by the shift magnitude."""
        cfg = SyntheticShiftConfig(seed=0, n_blocks=3, dim=4, n_source=3000, n_target=3000, shift_magnitude=2.0)
        task = generate_synthetic(cfg)
        noise = cfg.noise_blocks[0]
        gap = task.target.blocks[noise].mean(axis=1) - task.source.blocks[noise].mean(axis=1)
        assert np.linalg.norm(gap) == pytest.approx(2.0, abs=0.2)

    def test_zero_separation_is_chance(self) -> None:
        """Without class signal the baseline sits near 1/c accuracy."""
        cfg = SyntheticShiftConfig(seed=4, class_separation=0.0, shift_magnitude=0.0, n_source=300, n_target=300)
        task = generate_synthetic(cfg)
        model = train_baseline(task.source, task.source_labels)
        preds = predict_baseline(model, task.target).hard_labels
        acc = accuracy(confusion(preds, task.target_labels.indices, 3))
        assert abs(acc / 100.0 - 1.0 / 3.0) <= 0.1

    def test_invalid_informative_block(self) -> None:
        """Informative blocks must lie inside [0, K)."""
        with pytest.raises(ValidationError):
            SyntheticShiftConfig(n_blocks=3, informative_blocks=(3,))
        with pytest.raises(ValidationError):
            SyntheticShiftConfig(informative_blocks=())

    def test_class_name_count(self) -> None:
        """class_names must match n_classes."""
        with pytest.raises(ValidationError):
            SyntheticShiftConfig(n_classes=3, class_names=("a", "b"))


class TestDomainFamily:
    """Tests for stand-ins of several datasets."""

    def test_builtin_counts(self) -> None:
        """Each stand-in follows its manifest's class counts."""
        family = generate_domain_family(SyntheticShiftConfig(seed=1, n_blocks=2, dim=3), BUILTIN_DATASETS)
        assert sorted(family) == ["C", "H", "N", "V"]
        features, labels = family["C"]
        assert features.n_samples == 130
        np.testing.assert_array_equal(labels.onehot.sum(axis=1), [32, 73, 25])
        assert labels.class_names == ("Positive", "Negative", "Surprise")
        assert features.sample_ids[0] == "C-0"

    def test_deterministic(self) -> None:
        """The same seed reproduces every dataset."""
        cfg = SyntheticShiftConfig(seed=9, n_blocks=2, dim=3)
        first = generate_domain_family(cfg, BUILTIN_DATASETS)
        second = generate_domain_family(cfg, BUILTIN_DATASETS)
        for dataset_id in first:
            np.testing.assert_array_equal(first[dataset_id][0].blocks, second[dataset_id][0].blocks)

    def test_dataset_independent_of_siblings(self) -> None:
        """A dataset does not change when fewer siblings precede it in id order."""
        cfg = SyntheticShiftConfig(seed=9, n_blocks=2, dim=3)
        full = generate_domain_family(cfg, BUILTIN_DATASETS)
        only_c = generate_domain_family(cfg, {"C": BUILTIN_DATASETS["C"]})
        # C sorts first, so it draws from the same stream in both runs
        np.testing.assert_array_equal(full["C"][0].blocks, only_c["C"][0].blocks)

    def test_missing_counts(self) -> None:
        """Manifests without class counts cannot be simulated."""
        with pytest.raises(ConfigError):
            generate_domain_family(SyntheticShiftConfig(), {"X": DatasetManifest(dataset_id="X", N=5)})

    def test_class_names_must_agree(self) -> None:
        """All datasets of a family share their classes."""
        manifests = {
            "A": DatasetManifest(dataset_id="A", class_counts={"a": 2, "b": 2}),
            "B": DatasetManifest(dataset_id="B", class_counts={"a": 2, "c": 2}),
        }
        with pytest.raises(ConfigError):
            generate_domain_family(SyntheticShiftConfig(), manifests)
