import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.decomposition import PCA

from pixelhop.cascade import gather_neighborhood
from pixelhop.datasets import load_dataset, zero_pad
from pixelhop.diagnostics import covariance_deltas, remove_dc
from pixelhop.exceptions import ArgumentError, InsufficientDataError, NumericError
from pixelhop.saab import (CovarianceAccumulator, Saab, ac_basis, cov_delta, dc_kernel,
                           filter_cosine, select_kernel_count)

from conftest import require


def correlated_patches(rng, n=2000, d=9):
    mixing = rng.normal(size=(d, d)) * np.linspace(2.0, 0.1, d)
    return rng.normal(size=(n, d)) @ mixing.T + rng.normal(size=d)


class TestKernels:
    def test_dc_kernel_of_nine(self):
        np.testing.assert_allclose(dc_kernel(9), np.full(9, 1 / 3))

    @pytest.mark.parametrize("d", [1, 2, 9, 27, 216])
    def test_ac_basis_orthonormal_complement(self, d):
        B = ac_basis(d)
        assert B.shape == (d, d - 1)
        np.testing.assert_allclose(B.T @ B, np.eye(d - 1), atol=1e-12)
        np.testing.assert_allclose(B.T @ dc_kernel(d), 0, atol=1e-12)

    def test_gram_of_all_kernels_is_identity(self, rng):
        s = Saab(energy_threshold=1.0).fit(correlated_patches(rng))
        W = np.vstack([s.dc_kernel_, s.ac_kernels_])
        np.testing.assert_allclose(W @ W.T, np.eye(len(W)), atol=1e-8)

    def test_ac_kernels_match_pca_oracle(self, rng):
        X = correlated_patches(rng)
        s = Saab(energy_threshold=1.0).fit(X)
        pca = PCA().fit(remove_dc(X))
        for k in range(6):
            assert filter_cosine(s.ac_kernels_[k], pca.components_[k]) > 0.999
        np.testing.assert_allclose(s.eigenvalues_, pca.explained_variance_[:8], rtol=1e-8)

    def test_sign_convention_largest_entry_positive(self, rng):
        s = Saab(energy_threshold=1.0).fit(correlated_patches(rng))
        for row in s.ac_kernels_:
            assert row[np.argmax(np.abs(row))] > 0

    def test_constant_patches_give_no_ac_kernels(self):
        X = np.outer(np.arange(10.0), np.ones(9))
        s = Saab().fit(X)
        assert len(s.ac_kernels_) == 0 and s.n_components_ == 1


class TestResponses:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (40, 9), elements=st.floats(-5, 5)),
           st.sampled_from([0.5, 0.9, 0.97, 1.0]))
    def test_nonnegative_on_training_patches(self, X, threshold):
        s = Saab(energy_threshold=threshold).fit(X)
        assert np.all(s.transform(X)[:, 1:] >= -1e-9)

    def test_dc_response_is_scaled_mean(self, rng):
        X = rng.random((50, 9))
        s = Saab().fit(X)
        np.testing.assert_allclose(s.transform(X)[:, 0], X.mean(axis=1) * 3, atol=1e-12)

    def test_bias_on_dc(self, rng):
        X = rng.random((50, 9))
        plain, shifted = Saab().fit(X), Saab(bias_on_dc=True).fit(X)
        np.testing.assert_allclose(shifted.transform(X)[:, 0] - plain.transform(X)[:, 0], plain.bias_)

    def test_full_rank_inverse_is_exact(self, rng):
        X = rng.normal(size=(200, 9))
        s = Saab(energy_threshold=1.0).fit(X)
        np.testing.assert_allclose(s.inverse_transform(s.transform(X)), X, atol=1e-10)

    def test_dimension_mismatch(self, rng):
        s = Saab().fit(rng.random((20, 9)))
        with pytest.raises(ArgumentError):
            s.transform(rng.random((3, 8)))

    def test_errors(self, rng):
        with pytest.raises(InsufficientDataError):
            Saab().fit(np.zeros((1, 9)))
        with pytest.raises(ArgumentError):
            Saab(energy_threshold=1.5).fit(rng.random((10, 9)))
        X = rng.random((10, 9))
        X[3, 3] = np.nan
        with pytest.raises(NumericError):
            Saab().fit(X)


class TestStreamingFit:
    @pytest.mark.parametrize("batch", [1, 7, 500, 5000])
    def test_matches_in_memory_fit(self, rng, batch):
        X = correlated_patches(rng, d=18)
        full = Saab(energy_threshold=0.99).fit(X)
        streamed = Saab(energy_threshold=0.99).fit_stream(
            lambda: (X[s:s + batch] for s in range(0, len(X), batch)))
        assert len(streamed.ac_kernels_) == len(full.ac_kernels_)
        np.testing.assert_allclose(streamed.ac_kernels_, full.ac_kernels_, atol=1e-9)
        np.testing.assert_allclose(streamed.eigenvalues_, full.eigenvalues_, rtol=1e-9)
        np.testing.assert_allclose(streamed.feature_mean_, full.feature_mean_, atol=1e-12)
        assert streamed.bias_ == pytest.approx(full.bias_, rel=1e-12)

    def test_rejects_too_few_and_nonfinite(self):
        with pytest.raises(InsufficientDataError):
            Saab().fit_stream(lambda: iter([np.ones((1, 9))]))
        with pytest.raises(InsufficientDataError):
            Saab().fit_stream(lambda: iter([]))
        with pytest.raises(NumericError):
            Saab().fit_stream(lambda: iter([np.full((4, 9), np.inf)]))


class TestEnergySelection:
    spectrum = np.array([0.5, 0.3, 0.15, 0.05])

    @pytest.mark.parametrize("threshold,k", [(0.5, 1), (0.8, 2), (0.95, 3), (0.97, 4), (1.0, 4)])
    def test_synthetic_spectrum(self, threshold, k):
        assert select_kernel_count(self.spectrum, threshold) == k

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 12, elements=st.floats(0, 10)),
           st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_monotone_in_threshold(self, ev, t1, t2):
        ev = np.sort(ev)[::-1]
        lo, hi = sorted((t1, t2))
        assert select_kernel_count(ev, lo) <= select_kernel_count(ev, hi)

    def test_fitted_count_monotone(self, rng):
        X = correlated_patches(rng, d=27)
        counts = [len(Saab(energy_threshold=t).fit(X).ac_kernels_) for t in (0.8, 0.9, 0.95, 0.99)]
        assert counts == sorted(counts)

    def test_explicit_kernel_count(self, rng):
        assert len(Saab(n_kernels=3).fit(rng.random((30, 9))).ac_kernels_) == 3
        assert len(Saab(n_kernels=50).fit(rng.random((30, 9))).ac_kernels_) == 8


class TestCovariance:
    def test_two_point_variance(self):
        acc = CovarianceAccumulator(1).push([0.0]).push([2.0])
        assert acc.covariance()[0, 0] == pytest.approx(1.0)
        assert acc.covariance(ddof=1)[0, 0] == pytest.approx(2.0)

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (60, 4), elements=st.floats(-100, 100)),
           st.lists(st.integers(1, 59), max_size=4))
    def test_streaming_matches_two_pass(self, X, cuts):
        acc = CovarianceAccumulator(4)
        edges = [0] + sorted(set(cuts)) + [60]
        for a, b in zip(edges, edges[1:]):
            acc.push_batch(X[a:b])
        oracle = np.cov(X, rowvar=False, ddof=0)
        assert np.linalg.norm(acc.covariance() - oracle) <= 1e-8 * max(1.0, np.abs(X).max() ** 2)

    def test_single_push_matches_batch(self, rng):
        X = rng.normal(size=(300, 5)) + 1e4
        one = CovarianceAccumulator(5)
        for row in X:
            one.push(row)
        two = CovarianceAccumulator(5).push_batch(X)
        assert np.linalg.norm(one.covariance() - two.covariance()) < 1e-8
        assert np.linalg.norm(one.covariance() - np.cov(X, rowvar=False, ddof=0)) < 1e-8

    def test_cov_delta_values(self):
        assert cov_delta(np.eye(2), np.zeros((2, 2))) == pytest.approx(np.sqrt(2) / 2, abs=1e-4)
        assert cov_delta(np.eye(3), np.eye(3)) == 0.0
        with pytest.raises(ArgumentError):
            cov_delta(np.eye(2), np.eye(3))

    def test_filter_cosine(self):
        assert filter_cosine([1, 0], [1, 0]) == 1.0
        assert filter_cosine([1, 0], [-1, 0]) == 1.0
        assert filter_cosine([1, 0], [0, 1]) == 0.0
        with pytest.raises(NumericError):
            filter_cosine([0, 0], [1, 0])

    def test_delta_schedule_rejected_when_too_long(self, rng):
        with pytest.raises(ArgumentError):
            covariance_deltas(rng.random((10, 3)), [5, 20])
        with pytest.raises(ArgumentError):
            covariance_deltas(rng.random((10, 3)), [5, 5])

    @require("mnist")
    def test_delta_shrinks_on_real_patches(self, data_root):
        ds = zero_pad(load_dataset("mnist", "train", data_root), 32)
        patches = gather_neighborhood(ds.images[:300]).reshape(-1, 9)
        rng = np.random.default_rng(0)
        patches = remove_dc(patches[rng.permutation(len(patches))[:20_000]])
        # uniform step so consecutive changes are directly comparable
        schedule = list(range(500, 10_001, 100))
        deltas = covariance_deltas(patches, schedule)
        first, last = deltas[0], deltas[-1]
        assert last < 0.1 * first
