import numpy as np
import pytest
from scipy import stats

from bpatch.model import (CategoricalDataset, GenerativeDraw, Hyperparameters,
                          LabelsRequiredError, ModelState, ParentSet, StructuralError, Variant,
                          clamp_q, compute_g, compute_h, compute_kappa, generate_synthetic,
                          kernel_indicator)


def _parents(features, labels=None, V=3):
    features = np.asarray(features)
    return ParentSet(features, np.full(features.shape[1], V), labels, 2)


class TestComputeG:
    def test_no_qualifying_parent_leaves_baseline(self, hp):
        par = _parents([[0, 1], [2, 2]])
        g = compute_g(np.zeros(2), np.ones((2, 2)), par, hp, 0)
        np.testing.assert_allclose(g, [0.001] * 3)

    def test_model1_two_voters_same_value(self):
        hp = Hyperparameters(variant="model1")
        par = _parents([[1, 0], [1, 2]])
        g = compute_g(np.array([1, 1]), np.array([[1, 0], [1, 1]]), par, hp, 0)
        np.testing.assert_allclose(g, [0.001, 4.001, 0.001])

    def test_model2_vote_scaled_by_kappa(self):
        hp = Hyperparameters(variant="model2")
        par = _parents([[0, 1, 2]])
        g = compute_g(np.array([1]), np.array([[1, 1, 1]]), par, hp, 0)
        np.testing.assert_allclose(g, [6.001, 0.001, 0.001])

    def test_bad_feature_index(self, hp):
        par = _parents([[0, 1]])
        with pytest.raises(StructuralError):
            compute_g(np.array([1]), np.ones((1, 2)), par, hp, 5)


class TestComputeH:
    def test_three_neighbours_of_class_two(self):
        hp = Hyperparameters(variant="model1")
        par = _parents([[0], [1], [2]], labels=[1, 1, 1])
        h = compute_h(np.ones(3), np.ones((3, 1)), par, hp)
        np.testing.assert_allclose(h, [0.001, 3.001])

    def test_no_neighbours(self, hp):
        par = _parents([[0], [1]], labels=[0, 1])
        np.testing.assert_allclose(compute_h(np.zeros(2), np.ones((2, 1)), par, hp), [hp.mu0] * 2)

    def test_model2_kappa_four(self):
        hp = Hyperparameters(variant="model2")
        par = _parents([[0, 0, 0, 0]], labels=[0])
        np.testing.assert_allclose(compute_h(np.ones(1), np.ones((1, 4)), par, hp), [4.001, 0.001])

    def test_unlabelled_parents(self, hp):
        with pytest.raises(LabelsRequiredError):
            compute_h(np.ones(1), np.ones((1, 1)), _parents([[0]]), hp)


class TestKappa:
    def test_examples(self):
        w = np.array([[1, 1, 1, 1, 0]])
        assert compute_kappa(np.array([1]), w).tolist() == [4]
        assert compute_kappa(np.array([0]), w).tolist() == [0]
        assert compute_kappa(np.ones(3), np.zeros((3, 5))).tolist() == [0, 0, 0]

    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            compute_kappa(np.ones(2), np.ones((3, 1)))


class TestKernelIndicator:
    @pytest.mark.parametrize("x,v,r,out", [(5.0, 5.3, 0.5, 1), (5.0, 6.0, 0.5, 0), (2.0, 2.0, 0, 1)])
    def test_examples(self, x, v, r, out):
        assert kernel_indicator(x, v, r) == out

    def test_negative_bandwidth(self):
        with pytest.raises(ValueError):
            kernel_indicator(0.0, 0.0, -1.0)


class TestValueObjects:
    def test_dataset_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            CategoricalDataset(np.array([[0, 3]]), np.array([2, 3]))

    def test_dataset_shape_checks(self):
        with pytest.raises(StructuralError):
            CategoricalDataset(np.array([[0, 1]]), np.array([2]))

    def test_state_checks(self):
        with pytest.raises(StructuralError):
            ModelState(np.zeros((2, 2)), np.zeros((2, 3, 1)), np.array([0.5]))
        with pytest.raises(ValueError):
            ModelState(np.zeros((1, 1)), np.zeros((1, 1, 1)), np.array([1.0]))

    def test_hyperparameters(self):
        with pytest.raises(ValueError):
            Hyperparameters(alpha=1.5)
        with pytest.raises(ValueError):
            Hyperparameters(lam=0)
        assert Hyperparameters(variant="model1").variant is Variant.MODEL1
        assert Hyperparameters().as_dict()["variant"] == "model2"

    def test_clamp(self):
        q = clamp_q(np.array([0.0, 0.5, 1.0]))
        assert 0 < q[0] < 1e-8 and q[1] == 0.5 and 1 - 1e-8 < q[2] < 1


class TestGenerate:
    def _par(self):
        r = np.random.default_rng(0)
        return ParentSet(r.integers(0, 3, (4, 3)), np.full(3, 3), np.array([0, 1, 0, 1]), 2)

    def test_alpha_extremes(self):
        par = self._par()
        assert generate_synthetic(Hyperparameters(alpha=0), par, 20, 1).planted_state.z.sum() == 0
        assert generate_synthetic(Hyperparameters(alpha=1), par, 20, 1).planted_state.z.all()

    def test_deterministic(self):
        a = generate_synthetic(Hyperparameters(), self._par(), 15, 3)
        b = generate_synthetic(Hyperparameters(), self._par(), 15, 3)
        np.testing.assert_array_equal(a.dataset.features, b.dataset.features)
        np.testing.assert_array_equal(a.planted_state.w, b.planted_state.w)
        np.testing.assert_array_equal(a.planted_theta, b.planted_theta)

    def test_simplexes(self):
        d = generate_synthetic(Hyperparameters(), self._par(), 30, 5)
        assert isinstance(d, GenerativeDraw)
        for row in d.planted_phi:
            for p in row:
                assert abs(p.sum() - 1) < 1e-12 and (p >= 0).all()
        np.testing.assert_allclose(d.planted_theta.sum(axis=1), 1, atol=1e-12)

    def test_alpha_zero_labels_uniform(self):
        d = generate_synthetic(Hyperparameters(alpha=0), self._par(), 5000, 9)
        counts = np.bincount(d.dataset.labels, minlength=2)
        assert stats.chisquare(counts).pvalue > 0.01

    def test_needs_labels(self):
        par = ParentSet(np.zeros((2, 2), int), np.array([2, 2]))
        with pytest.raises(LabelsRequiredError):
            generate_synthetic(Hyperparameters(), par, 3, 0)
