"""Tests for the RSTR objective, training loop and prediction."""

import numpy as np
import pytest
from pydantic import ValidationError

from rstr_cdmer.core.baseline import predict_baseline, train_baseline
from rstr_cdmer.core.kernels import BlockedFeatureSet, KernelConfig, build_kernel_set
from rstr_cdmer.core.metrics import accuracy, confusion
from rstr_cdmer.core.model import (
    LabelMatrix,
    RstrHyperparams,
    RstrModel,
    mmd,
    objective,
    predict,
    rebalance_scale,
    relaxed_mmd,
    train,
)
from rstr_cdmer.errors import DimensionMismatchError, KernelConfigMismatchError
from rstr_cdmer.services.synthetic import SyntheticShiftConfig, generate_synthetic


def _kernels(rng, n_blocks=3, dim=4, n_source=5, n_target=6):
    source = BlockedFeatureSet(rng.standard_normal((n_blocks, dim, n_source)), "source")
    target = BlockedFeatureSet(rng.standard_normal((n_blocks, dim, n_target)), "target")
    return source, target, build_kernel_set(source, target, KernelConfig())


def _single_sample_model(row):
    """A K=1, d=1 model whose score for test sample x=1 is ``row``."""
    P = np.zeros((2, len(row)))
    P[0] = row
    return RstrModel(
        P=P,
        w=np.array([1.0]),
        kernel=KernelConfig(),
        train_source=BlockedFeatureSet(np.array([[[1.0]]]), "source"),
        train_target=BlockedFeatureSet(np.array([[[0.0]]]), "target"),
        class_names=tuple(f"c{k}" for k in range(len(row))),
        objective_trace=(),
        converged=True,
    )


class TestLabelMatrix:
    """Tests for one-hot label matrices."""

    def test_from_indices(self) -> None:
        """Indices become one-hot columns and come back unchanged."""
        labels = LabelMatrix.from_indices([2, 0, 1, 0], ("a", "b", "c"))
        assert labels.onehot.shape == (3, 4)
        np.testing.assert_array_equal(labels.indices, [2, 0, 1, 0])
        np.testing.assert_array_equal(labels.onehot.sum(axis=0), 1.0)

    def test_select(self) -> None:
        """select keeps the class names."""
        labels = LabelMatrix.from_indices([2, 0, 1], ("a", "b", "c"))
        subset = labels.select([2, 0])
        np.testing.assert_array_equal(subset.indices, [1, 2])
        assert subset.class_names == ("a", "b", "c")

    def test_rejects_two_hot_column(self) -> None:
        """A column with two ones is not a label."""
        with pytest.raises(ValueError):
            LabelMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]), ("a", "b"))

    def test_rejects_single_class_and_duplicates(self) -> None:
        """At least two distinct class names are required."""
        with pytest.raises(ValueError):
            LabelMatrix.from_indices([0, 0], ("a",))
        with pytest.raises(ValueError):
            LabelMatrix.from_indices([0, 1], ("a", "a"))

    def test_out_of_range_index(self) -> None:
        """Indices past the last class are refused."""
        with pytest.raises(ValueError):
            LabelMatrix.from_indices([0, 3], ("a", "b", "c"))


class TestHyperparams:
    """Tests for the RSTR hyperparameter model."""

    def test_lambda_alias(self) -> None:
        """``lambda`` and ``lam`` both set the region-weight sparsity."""
        assert RstrHyperparams(**{"lambda": 5.0}).lam == 5.0
        assert RstrHyperparams(lam=2.0).lam == 2.0

    def test_summary(self) -> None:
        """summary exposes the report keys."""
        summary = RstrHyperparams(lam=10.0, mu=0.5, gamma=0.05).summary()
        assert summary == {"lambda": 10.0, "mu": 0.5, "gamma": 0.05, "kernel": "linear"}

    def test_negative_weight(self) -> None:
        """Trade-off weights must be non-negative."""
        with pytest.raises(ValidationError):
            RstrHyperparams(mu=-0.1)


class TestObjective:
    """Tests for the full objective and its relaxed MMD term."""

    def test_zero_point(self, rng) -> None:
        """P=0, w=0 leaves only ||L||_F^2."""
        source, target, kernels = _kernels(rng)
        labels = LabelMatrix.from_indices([0, 1, 2, 0, 1], ("a", "b", "c"))
        hp = RstrHyperparams(lam=3.0, mu=2.0, gamma=1.0)
        value = objective(np.zeros((11, 3)), np.zeros(3), kernels, labels, hp)
        assert value == pytest.approx(5.0)

    def test_naive_recomputation(self, rng) -> None:
        """Matches a loop-by-loop evaluation of every term."""
        source, target, kernels = _kernels(rng)
        labels = LabelMatrix.from_indices([0, 1, 2, 0, 1], ("a", "b", "c"))
        L = labels.onehot
        P = rng.standard_normal((11, 3))
        w = rng.uniform(0.0, 1.0, size=3)
        hp = RstrHyperparams(lam=0.3, mu=0.2, gamma=0.7)

        loss = 0.0
        for k in range(3):
            for j in range(5):
                fitted = 0.0
                for i in range(3):
                    basis = np.hstack([source.blocks[i], target.blocks[i]])
                    for n in range(11):
                        fitted += w[i] * P[n, k] * float(basis[:, n] @ source.blocks[i][:, j])
                loss += (L[k, j] - fitted) ** 2

        gap = np.zeros(3)
        for i in range(3):
            basis = np.hstack([source.blocks[i], target.blocks[i]])
            mean_gap = (basis.T @ source.blocks[i]).mean(axis=1) - (basis.T @ target.blocks[i]).mean(axis=1)
            gap += w[i] * (P.T @ mean_gap)

        expected = loss + hp.lam * w.sum() + hp.mu * np.abs(P).sum() + hp.gamma * float(gap @ gap)
        assert objective(P, w, kernels, labels, hp) == pytest.approx(expected, rel=1e-10)

    def test_relaxed_mmd_identical_domains(self, rng) -> None:
        """Identical source and target sets have no mean gap."""
        blocks = rng.standard_normal((2, 3, 6))
        source = BlockedFeatureSet(blocks, "source")
        target = BlockedFeatureSet(blocks, "target")
        kernels = build_kernel_set(source, target, KernelConfig(kind="gaussian"))
        value = relaxed_mmd(rng.standard_normal((12, 3)), np.ones(2), kernels)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_relaxed_mmd_zero_coefficients(self, rng) -> None:
        """P=0 gives zero."""
        _, _, kernels = _kernels(rng)
        assert relaxed_mmd(np.zeros((11, 3)), np.ones(3), kernels) == 0.0

    def test_shape_checks(self, rng) -> None:
        """Wrong P or w shapes are rejected."""
        _, _, kernels = _kernels(rng)
        with pytest.raises(DimensionMismatchError):
            relaxed_mmd(np.zeros((10, 3)), np.ones(3), kernels)
        with pytest.raises(DimensionMismatchError):
            relaxed_mmd(np.zeros((11, 3)), np.ones(2), kernels)


class TestMmd:
    """Tests for the empirical MMD diagnostic."""

    def test_identical_sets(self, rng) -> None:
        """Identical samples have zero discrepancy."""
        X = rng.standard_normal((3, 10))
        assert mmd(X, X, KernelConfig(kind="gaussian")) == pytest.approx(0.0, abs=1e-6)

    def test_linear_points(self) -> None:
        """Linear MMD of {0} and {2} is the mean distance 2."""
        assert mmd(np.array([[0.0]]), np.array([[2.0]]), KernelConfig()) == pytest.approx(2.0)

    def test_linear_means(self, rng) -> None:
        """Linear MMD of 1-D sets is |mean(s) - mean(t)|."""
        s = rng.standard_normal((1, 13))
        t = rng.standard_normal((1, 17)) + 0.5
        expected = abs(s.mean() - t.mean())
        assert mmd(s, t, KernelConfig()) == pytest.approx(expected, abs=1e-12)


class TestTrain:
    """Tests for alternating (P, w) training."""

    def test_trace_is_monotone(self, small_task) -> None:
        """The recorded objective never increases."""
        model = train(small_task.source, small_task.source_labels, small_task.target, RstrHyperparams())
        trace = np.asarray(model.objective_trace)
        assert trace.size >= 1
        assert np.all(np.diff(trace) <= 1e-8)
        assert model.P.shape == (60, 3)
        assert np.all(model.w >= 0)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_converges_within_outer_budget(self, seed) -> None:
        """Default settings on a K=6, d=8, 60+60 sample problem converge in 50 outer iterations."""
        task = generate_synthetic(SyntheticShiftConfig(seed=seed, n_blocks=6, dim=8, n_source=60, n_target=60))
        model = train(task.source, task.source_labels, task.target, RstrHyperparams())
        trace = np.asarray(model.objective_trace)
        assert model.converged
        assert trace.size <= 50
        assert np.all(np.diff(trace) <= 1e-8)

    def test_huge_lambda_switches_regions_off(self, small_task) -> None:
        """A dominant L1 weight on w drives every region weight to zero."""
        hp = RstrHyperparams(lam=1e8, mu=0.1, gamma=0.1)
        model = train(small_task.source, small_task.source_labels, small_task.target, hp)
        np.testing.assert_array_equal(model.w, 0.0)
        np.testing.assert_allclose(model.P, 0.0, atol=1e-10)
        assert model.objective_trace[-1] == pytest.approx(small_task.source.n_samples)

    def test_fixed_region_weights(self, small_task) -> None:
        """fix_region_weights keeps w at one."""
        hp = RstrHyperparams(fix_region_weights=True, outer_max_iters=3)
        model = train(small_task.source, small_task.source_labels, small_task.target, hp)
        np.testing.assert_array_equal(model.w, 1.0)

    def test_no_shift_matches_baseline(self) -> None:
        """With target = source, training accuracy is on par with the regression baseline."""
        task = generate_synthetic(SyntheticShiftConfig(seed=11, shift_magnitude=0.0, n_source=60, n_target=60))
        target = task.source.with_tag("target")
        model = train(task.source, task.source_labels, target, RstrHyperparams(lam=0.01, mu=0.01, gamma=0.0))

        truths = task.source_labels.indices
        rstr = accuracy(confusion(predict(model, task.source.with_tag("test")).hard_labels, truths, 3))
        base_model = train_baseline(task.source, task.source_labels)
        base = accuracy(confusion(predict_baseline(base_model, task.source).hard_labels, truths, 3))
        assert rstr >= base - 5.0

    def test_rebalance_scale(self, rng) -> None:
        """Rescaling keeps the fit and MMD terms, equalizes the L1 terms and never raises the objective."""
        source, target, kernels = _kernels(rng)
        L = LabelMatrix.from_indices([0, 1, 2, 0, 1], ("a", "b", "c")).onehot
        P = rng.standard_normal((11, 3))
        w = rng.uniform(0.1, 3.0, size=3)
        hp = RstrHyperparams(lam=0.7, mu=0.2, gamma=0.4)
        P_bal, w_bal = rebalance_scale(P, w, hp.lam, hp.mu)

        ks, _ = kernels.combine(w)
        ks_bal, _ = kernels.combine(w_bal)
        np.testing.assert_allclose(P_bal.T @ ks_bal, P.T @ ks, atol=1e-10)
        assert relaxed_mmd(P_bal, w_bal, kernels) == pytest.approx(relaxed_mmd(P, w, kernels))
        assert hp.lam * w_bal.sum() == pytest.approx(hp.mu * np.abs(P_bal).sum())
        assert objective(P_bal, w_bal, kernels, L, hp) <= objective(P, w, kernels, L, hp) + 1e-10

    def test_rebalance_degenerate(self) -> None:
        """Zero weights or zero norms leave the pair untouched."""
        P = np.ones((4, 2))
        w = np.zeros(2)
        assert rebalance_scale(P, w, 1.0, 1.0)[1] is w
        assert rebalance_scale(P, np.ones(2), 0.0, 1.0)[0] is P

    def test_label_count_mismatch(self, small_task) -> None:
        """Labels must match the number of source samples."""
        with pytest.raises(DimensionMismatchError):
            train(small_task.source, small_task.source_labels.select(range(10)), small_task.target)


class TestPredict:
    """Tests for simplex-constrained prediction."""

    def test_one_hot_score(self) -> None:
        """A one-hot score vector is its own label vector."""
        model = _single_sample_model([0.0, 1.0, 0.0])
        predicted = predict(model, BlockedFeatureSet(np.array([[[1.0]]]), "test"))
        np.testing.assert_allclose(predicted.label_vectors[:, 0], [0.0, 1.0, 0.0])
        assert predicted.hard_labels[0] == 1

    def test_tie_goes_to_first_class(self) -> None:
        """Scores (0.5, 0.5, -1) project to (0.5, 0.5, 0) and pick class index 0."""
        model = _single_sample_model([0.5, 0.5, -1.0])
        predicted = predict(model, BlockedFeatureSet(np.array([[[1.0]]]), "test"))
        np.testing.assert_allclose(predicted.label_vectors[:, 0], [0.5, 0.5, 0.0])
        assert predicted.hard_labels[0] == 0

    def test_projection_preserves_ranking(self, small_task) -> None:
        """Hard labels equal the argmax of the raw scores when the top two differ."""
        model = train(small_task.source, small_task.source_labels, small_task.target, RstrHyperparams())
        predicted = predict(model, small_task.target.with_tag("test"))
        top_two = np.sort(predicted.scores, axis=0)[-2:]
        clear = top_two[1] - top_two[0] > 1e-12
        np.testing.assert_array_equal(
            predicted.hard_labels[clear], np.argmax(predicted.scores, axis=0)[clear]
        )
        np.testing.assert_allclose(predicted.label_vectors.sum(axis=0), 1.0, atol=1e-12)

    def test_permuting_test_samples(self, small_task, rng) -> None:
        """Reordering the test samples reorders the predictions the same way."""
        model = train(small_task.source, small_task.source_labels, small_task.target, RstrHyperparams(outer_max_iters=5))
        test = small_task.target.with_tag("test")
        perm = rng.permutation(test.n_samples)
        base = predict(model, test)
        permuted = predict(model, test.select(perm))
        np.testing.assert_allclose(permuted.scores, base.scores[:, perm], atol=1e-10)
        np.testing.assert_array_equal(permuted.hard_labels, base.hard_labels[perm])

    def test_kernel_mismatch(self) -> None:
        """Predicting with another kernel is refused."""
        model = _single_sample_model([1.0, 0.0])
        with pytest.raises(KernelConfigMismatchError):
            predict(model, BlockedFeatureSet(np.array([[[1.0]]]), "test"), kernel=KernelConfig(kind="gaussian"))

    def test_region_ranking(self) -> None:
        """Blocks are ranked by decreasing weight, ties in index order."""
        model = _single_sample_model([1.0, 0.0])
        assert model.region_ranking() == [0]
