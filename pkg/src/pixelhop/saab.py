"""Saab transform (subspace approximation with adjusted bias).

A patch ``x`` of dimension ``d`` is split into its projection on the constant
(DC) direction and the orthogonal (AC) residual. PCA of the AC residual
covariance gives the AC kernels; a scalar bias keeps every AC response on the
training patches nonnegative.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ArgumentError, InsufficientDataError, NumericError

_CHUNK = 8192


def dc_kernel(d):
    return np.full(d, 1.0 / np.sqrt(d))


def ac_basis(d):
    """Orthonormal basis (``d x (d-1)``) of the complement of the DC direction.

    Built from a Householder reflection that maps ``e_1`` onto the DC kernel,
    so it is exact, deterministic and needs no eigensolver.
    """
    u = dc_kernel(d)
    v = u.copy()
    v[0] -= 1.0
    norm = np.linalg.norm(v)
    if norm < 1e-15:
        return np.eye(d)[:, 1:]
    v /= norm
    H = np.eye(d) - 2.0 * np.outer(v, v)
    return H[:, 1:]


def select_kernel_count(eigenvalues, energy_threshold):
    """Smallest ``K`` whose leading eigenvalues hold ``energy_threshold`` of the total."""
    if not 0 < energy_threshold <= 1:
        raise ArgumentError(f"energy threshold must be in (0, 1], got {energy_threshold}")
    total = float(np.sum(eigenvalues))
    if total <= 0:
        return 0
    ratio = np.cumsum(eigenvalues) / total
    # tolerance absorbs rounding in the cumulative sum (0.5+0.3+0.15 != 0.95 exactly)
    return int(np.searchsorted(ratio, energy_threshold - 1e-10) + 1)


def _canonical_sign(vectors):
    """Flip rows so each row's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(len(vectors)), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def _mean_and_scatter(X):
    """Two-pass mean and scatter matrix in float64, chunked over rows."""
    n, d = X.shape
    mean = np.zeros(d)
    for s in range(0, n, _CHUNK):
        mean += X[s:s + _CHUNK].sum(axis=0, dtype=np.float64)
    mean /= n
    scatter = np.zeros((d, d))
    for s in range(0, n, _CHUNK):
        block = np.asarray(X[s:s + _CHUNK], dtype=np.float64) - mean
        scatter += block.T @ block
    return mean, scatter


class Saab(BaseEstimator, TransformerMixin):
    """Saab transform fitted on an ``N x d`` patch matrix.

    Parameters
    ----------
    energy_threshold : float in (0, 1], default=0.97
        Keep the fewest AC kernels whose eigenvalues sum to at least this
        fraction of the total AC energy. Ignored when ``n_kernels`` is set.
    n_kernels : int or None, default=None
        Explicit number of AC kernels, capped at ``d - 1``.
    bias_on_dc : bool, default=False
        Also add the bias to the DC response.

    Attributes
    ----------
    dc_kernel_ : ndarray of shape (d,)
    ac_kernels_ : ndarray of shape (K, d)
        Orthonormal rows, each orthogonal to ``dc_kernel_``.
    eigenvalues_ : ndarray of shape (d - 1,)
        Full descending AC spectrum (used by the energy diagnostics).
    feature_mean_ : ndarray of shape (d,)
    bias_ : float
    """

    def __init__(self, energy_threshold=0.97, n_kernels=None, bias_on_dc=False):
        self.energy_threshold = energy_threshold
        self.n_kernels = n_kernels
        self.bias_on_dc = bias_on_dc

    def _check_params(self):
        if self.n_kernels is None and not 0 < self.energy_threshold <= 1:
            raise ArgumentError(
                f"energy threshold must be in (0, 1], got {self.energy_threshold}")

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 2:
            raise ArgumentError(f"patches must be a 2-D matrix, got shape {X.shape}")
        n, d = X.shape
        if n < 2:
            raise InsufficientDataError(f"Saab needs at least 2 patches, got {n}")
        if d < 1:
            raise ArgumentError("patch dimension must be at least 1")
        self._check_params()
        for s in range(0, n, _CHUNK):
            if not np.all(np.isfinite(X[s:s + _CHUNK])):
                raise NumericError("patches contain NaN or infinite values")
        mean, scatter = _mean_and_scatter(X)
        self._fit_moments(mean, scatter, n)
        self.bias_ = self._max_ac_norm(X[s:s + _CHUNK] for s in range(0, n, _CHUNK))
        return self

    def fit_stream(self, batches):
        """Fit from patch batches too large to hold at once.

        ``batches`` is a zero-argument callable returning an iterable of
        ``(m, d)`` arrays; it is called twice (moments, then the bias).
        """
        self._check_params()
        acc = None
        for block in batches():
            block = np.asarray(block, dtype=np.float64)
            if block.ndim != 2:
                raise ArgumentError(f"patch batches must be 2-D, got shape {block.shape}")
            if not np.all(np.isfinite(block)):
                raise NumericError("patches contain NaN or infinite values")
            if acc is None:
                acc = CovarianceAccumulator(block.shape[1])
            acc.push_batch(block)
        if acc is None or acc.count < 2:
            raise InsufficientDataError(
                f"Saab needs at least 2 patches, got {0 if acc is None else acc.count}")
        self._fit_moments(acc.mean.copy(), 0.5 * (acc.scatter + acc.scatter.T), acc.count)
        self.bias_ = self._max_ac_norm(batches())
        return self

    def _fit_moments(self, mean, scatter, n):
        d = len(mean)
        B = ac_basis(d)
        cov_ac = B.T @ (scatter / (n - 1)) @ B
        cov_ac = 0.5 * (cov_ac + cov_ac.T)
        if d > 1:
            evals, evecs = np.linalg.eigh(cov_ac)
            order = np.argsort(evals)[::-1]
            evals = np.clip(evals[order], 0.0, None)
            # round-off floor relative to the full patch variance
            evals[evals <= 1e-12 * max(np.trace(scatter) / (n - 1), 1e-300)] = 0.0
            kernels = _canonical_sign((B @ evecs[:, order]).T)
        else:
            evals = np.zeros(0)
            kernels = np.zeros((0, d))

        if self.n_kernels is not None:
            k = min(int(self.n_kernels), d - 1)
        else:
            k = select_kernel_count(evals, self.energy_threshold)

        self.n_features_in_ = d
        self.dc_kernel_ = dc_kernel(d)
        self.eigenvalues_ = evals
        self.ac_kernels_ = kernels[:k].copy()
        self.feature_mean_ = mean

    def _max_ac_norm(self, blocks):
        """Largest AC response magnitude any training patch can produce."""
        best = 0.0
        for block in blocks:
            block = np.asarray(block, dtype=np.float64) - self.feature_mean_
            ac = block - np.outer(block @ self.dc_kernel_, self.dc_kernel_)
            if len(ac):
                best = max(best, float(np.max(np.linalg.norm(ac, axis=1))))
        return best

    @property
    def energies_(self):
        check_is_fitted(self)
        return self.eigenvalues_[:len(self.ac_kernels_)]

    @property
    def energy_total_(self):
        check_is_fitted(self)
        return float(self.eigenvalues_.sum())

    @property
    def n_components_(self):
        """Output spectral dimension, ``1 + K``."""
        check_is_fitted(self)
        return 1 + len(self.ac_kernels_)

    def transform(self, X):
        check_is_fitted(self)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ArgumentError(
                f"expected patches of dimension {self.n_features_in_}, got shape {X.shape}")
        out = np.empty((len(X), self.n_components_))
        out[:, 0] = X @ self.dc_kernel_
        if self.bias_on_dc:
            out[:, 0] += self.bias_
        out[:, 1:] = (X - self.feature_mean_) @ self.ac_kernels_.T + self.bias_
        return out

    def inverse_transform(self, Y):
        """Map responses back to patch space (exact when all AC kernels are kept)."""
        check_is_fitted(self)
        Y = np.asarray(Y, dtype=np.float64)
        dc = Y[:, 0] - (self.bias_ if self.bias_on_dc else 0.0)
        mean_ac = self.feature_mean_ - (self.feature_mean_ @ self.dc_kernel_) * self.dc_kernel_
        return np.outer(dc, self.dc_kernel_) + mean_ac + (Y[:, 1:] - self.bias_) @ self.ac_kernels_


class CovarianceAccumulator:
    """Streaming mean and scatter (Welford / Chan batch merge)."""

    def __init__(self, dim):
        if dim < 1:
            raise ArgumentError("dimension must be at least 1")
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.scatter = np.zeros((dim, dim))

    def push(self, sample):
        sample = np.asarray(sample, dtype=np.float64)
        if sample.shape != (self.dim,):
            raise ArgumentError(f"expected a sample of dimension {self.dim}, got {sample.shape}")
        self.count += 1
        delta = sample - self.mean
        self.mean += delta / self.count
        self.scatter += np.outer(delta, sample - self.mean)
        return self

    def push_batch(self, samples):
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[1] != self.dim:
            raise ArgumentError(
                f"expected samples of dimension {self.dim}, got shape {samples.shape}")
        m = len(samples)
        if m == 0:
            return self
        b_mean = samples.mean(axis=0)
        centered = samples - b_mean
        b_scatter = centered.T @ centered
        total = self.count + m
        delta = b_mean - self.mean
        self.scatter += b_scatter + np.outer(delta, delta) * (self.count * m / total)
        self.mean += delta * (m / total)
        self.count = total
        return self

    def covariance(self, ddof=0):
        if self.count - ddof <= 0:
            return np.zeros((self.dim, self.dim))
        cov = self.scatter / (self.count - ddof)
        return 0.5 * (cov + cov.T)


def cov_delta(c1, c2):
    """Dimension-normalised Frobenius distance ``||c1 - c2||_F / d``."""
    c1, c2 = np.asarray(c1, dtype=np.float64), np.asarray(c2, dtype=np.float64)
    if c1.shape != c2.shape or c1.ndim != 2 or c1.shape[0] != c1.shape[1]:
        raise ArgumentError(f"need two square matrices of equal size, got {c1.shape} and {c2.shape}")
    return float(np.linalg.norm(c1 - c2, "fro") / c1.shape[0])


def filter_cosine(f1, f2):
    """Sign-invariant cosine similarity ``|f1.f2| / (|f1| |f2|)``."""
    f1, f2 = np.asarray(f1, dtype=np.float64), np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise ArgumentError(f"filter shapes differ: {f1.shape} vs {f2.shape}")
    n1, n2 = np.linalg.norm(f1), np.linalg.norm(f2)
    if n1 == 0 or n2 == 0:
        raise NumericError("cosine similarity of a zero vector is undefined")
    return float(abs(f1 @ f2) / (n1 * n2))
