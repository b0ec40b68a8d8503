"""Covariance eigendecomposition and loading-derived dimension weights."""

import numpy as np
import pytest

from durcast.errors import BadK, DegenerateInput, DimensionMismatch
from durcast.pca import (
    PCAModel,
    apply_weights,
    derive_weights,
    feature_importance_report,
    fit_pca,
    k_for_cumulative_variance,
    uniform_weights,
)


def random_matrix(seed, n=12, d=5):
    return np.random.default_rng(seed).normal(size=(n, d))


class TestFitPca:
    def test_reconstructs_covariance(self):
        x = random_matrix(0)
        model = fit_pca(x)
        cov = np.cov(x, rowvar=False, ddof=1)
        recon = model.components @ np.diag(model.explained_variance) @ model.components.T
        assert np.abs(recon - cov).max() < 1e-10

    def test_eigenvalues_sorted_and_nonnegative(self):
        model = fit_pca(random_matrix(1))
        ev = model.explained_variance
        assert np.all(ev[:-1] >= ev[1:])
        assert np.all(ev >= 0.0)

    def test_ratios_sum_to_one(self):
        model = fit_pca(random_matrix(2))
        assert model.explained_variance_ratio.sum() == pytest.approx(1.0)

    def test_sign_convention(self):
        model = fit_pca(random_matrix(3))
        for k in range(model.dim):
            col = model.components[:, k]
            assert col[int(np.argmax(np.abs(col)))] > 0.0

    def test_deterministic(self):
        x = random_matrix(4)
        a = fit_pca(x)
        b = fit_pca(x)
        assert np.array_equal(a.components, b.components)
        assert np.array_equal(a.explained_variance, b.explained_variance)

    def test_constant_matrix_gives_uniform_ratios(self):
        model = fit_pca(np.full((6, 4), 3.0))
        assert np.allclose(model.explained_variance, 0.0)
        assert np.allclose(model.explained_variance_ratio, 0.25)

    def test_single_column(self):
        x = np.array([[1.0], [2.0], [4.0]])
        model = fit_pca(x)
        assert model.dim == 1
        assert model.explained_variance[0] == pytest.approx(np.var(x, ddof=1))

    @pytest.mark.parametrize(
        "bad",
        [np.ones((1, 4)), np.ones(5), np.ones((5, 0))],
    )
    def test_degenerate_inputs(self, bad):
        with pytest.raises(DegenerateInput):
            fit_pca(bad)


class TestDeriveWeights:
    def test_matches_straight_loop(self):
        model = fit_pca(random_matrix(5, n=20, d=6))
        for k in range(1, model.dim + 1):
            w = derive_weights(model, k)
            assert w.k_used == k
            for j in range(model.dim):
                expected = (
                    sum(
                        abs(model.components[j, c]) * model.explained_variance_ratio[c]
                        for c in range(k)
                    )
                    / k
                )
                assert abs(w.weights[j] - expected) < 1e-15

    @pytest.mark.parametrize("k", [0, -1, 7])
    def test_k_out_of_range(self, k):
        model = fit_pca(random_matrix(6, d=6))
        with pytest.raises(BadK):
            derive_weights(model, k)


class TestUniformAndApply:
    def test_uniform(self):
        w = uniform_weights(5)
        assert np.array_equal(w.weights, np.ones(5))
        assert w.k_used == 0

    def test_uniform_rejects_bad_dim(self):
        with pytest.raises(BadK):
            uniform_weights(0)

    def test_apply_elementwise(self):
        w = derive_weights(fit_pca(random_matrix(7, d=4)), 2)
        v = np.array([1.0, -2.0, 0.5, 3.0])
        assert np.array_equal(apply_weights(v, w), v * w.weights)

    def test_apply_rejects_mismatch(self):
        w = uniform_weights(4)
        with pytest.raises(DimensionMismatch):
            apply_weights(np.ones(3), w)


class TestCumulativeVariance:
    def _model(self, ratios):
        d = len(ratios)
        return PCAModel(
            mean_vector=np.zeros(d),
            components=np.eye(d),
            explained_variance=np.array(ratios, dtype=float),
            explained_variance_ratio=np.array(ratios, dtype=float),
        )

    def test_thresholds(self):
        model = self._model([0.6, 0.3, 0.1])
        assert k_for_cumulative_variance(model, 0.5) == 1
        assert k_for_cumulative_variance(model, 0.6) == 1
        assert k_for_cumulative_variance(model, 0.7) == 2
        assert k_for_cumulative_variance(model, 0.95) == 3
        assert k_for_cumulative_variance(model, 1.0) == 3

    @pytest.mark.parametrize("fraction", [0.0, -0.5, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(BadK):
            k_for_cumulative_variance(self._model([0.5, 0.5]), fraction)


class TestImportanceReport:
    def test_sums_spans_and_ranks(self):
        w = uniform_weights(6)
        w.weights[:] = [0.1, 0.4, 0.2, 0.2, 0.05, 0.05]
        spans = [("age", 0, 1), ("dept", 1, 2), ("note", 3, 3)]
        report = feature_importance_report(w, spans)
        assert report[0] == ("dept", pytest.approx(0.6))
        assert report[1][0] == "note"
        assert report[2] == ("age", pytest.approx(0.1))

    def test_ties_break_by_name(self):
        w = uniform_weights(2)
        report = feature_importance_report(w, [("b", 0, 1), ("a", 1, 1)])
        assert [name for name, _ in report] == ["a", "b"]

    def test_rejects_uncovered_dims(self):
        with pytest.raises(DimensionMismatch):
            feature_importance_report(uniform_weights(4), [("a", 0, 2)])
