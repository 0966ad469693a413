"""Label-assisted regression (LAG).

Samples of each class are clustered into ``L`` groups. Every training sample
gets a soft target over the centroids of its own class,
``exp(-alpha * dist)`` normalised over the ``L`` centroids, and zeros for all
other classes. A linear least-squares map from features to these ``J * L``
targets is the supervised dimension reduction.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ArgumentError, InsufficientDataError, NumericError

_CHUNK = 8192


def _sq_distances(X, C):
    d2 = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _kmeans_pp(X, k, rng):
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(len(X))]
    closest = _sq_distances(X, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        if total <= 0:
            centers[i] = X[rng.integers(len(X))]
        else:
            centers[i] = X[rng.choice(len(X), p=closest / total)]
        closest = np.minimum(closest, _sq_distances(X, centers[i:i + 1])[:, 0])
    return centers


def kmeans(X, k, random_state=0, max_iter=300, tol=1e-4):
    """Lloyd's algorithm with k-means++ seeding.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    iterations. An empty cluster is re-seeded at the point of the largest
    cluster farthest from its centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) < k:
        raise InsufficientDataError(f"k-means needs at least {k} samples, got {len(X)}")
    rng = np.random.default_rng(random_state)
    centers = _kmeans_pp(X, k, rng)
    for _ in range(max_iter):
        assign = np.argmin(_sq_distances(X, centers), axis=1)
        counts = np.bincount(assign, minlength=k)
        new = np.zeros_like(centers)
        np.add.at(new, assign, X)
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        for j in np.flatnonzero(~nonempty):
            big = np.argmax(counts)
            members = np.flatnonzero(assign == big)
            far = members[np.argmax(((X[members] - new[big]) ** 2).sum(axis=1))]
            new[j] = X[far]
            assign[far] = j
            counts[big] -= 1
            counts[j] = 1
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    return centers


def kmeans_per_class(X, y, n_clusters, n_classes=None, random_state=0, max_iter=300, tol=1e-4):
    """Cluster each class separately; returns centroids of shape ``(J, L, n)``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n_classes = int(y.max()) + 1 if n_classes is None else n_classes
    seeds = np.random.SeedSequence(random_state).generate_state(n_classes)
    centroids = np.empty((n_classes, n_clusters, X.shape[1]))
    for j in range(n_classes):
        members = X[y == j]
        if len(members) < n_clusters:
            raise InsufficientDataError(
                f"class {j} has {len(members)} samples, fewer than {n_clusters} clusters")
        centroids[j] = kmeans(members, n_clusters, int(seeds[j]), max_iter, tol)
    return centroids


def soft_targets(X, y, centroids, alpha=10.0, hard=False):
    """Target matrix ``(N, J*L)``: softmax of ``-alpha * distance`` inside the own-class block."""
    if alpha <= 0:
        raise ArgumentError(f"alpha must be positive, got {alpha}")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y))
    n_classes, n_clusters, _ = centroids.shape
    T = np.zeros((len(X), n_classes * n_clusters))
    for j in np.unique(y):
        rows = np.flatnonzero(y == j)
        dist = np.sqrt(_sq_distances(X[rows], centroids[j]))
        if hard:
            p = np.zeros_like(dist)
            p[np.arange(len(rows)), np.argmin(dist, axis=1)] = 1.0
        else:
            logits = -alpha * (dist - dist.min(axis=1, keepdims=True))
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
        T[rows, j * n_clusters:(j + 1) * n_clusters] = p
    return T


def soft_target(x, label, centroids, alpha=10.0):
    """Soft target vector for a single sample."""
    return soft_targets(np.asarray(x)[None, :], [label], centroids, alpha)[0]


def least_squares(X, T, ridge=1e-6):
    """Affine least squares ``T ~ X @ W.T + b`` with a trace-scaled ridge.

    Columns are centred first so the intercept does not enter the ridge and
    the normal equations stay well conditioned.
    """
    n, d = X.shape
    mean = np.zeros(d)
    for s in range(0, n, _CHUNK):
        mean += X[s:s + _CHUNK].sum(axis=0, dtype=np.float64)
    mean /= n
    t_mean = T.mean(axis=0)
    gram = np.zeros((d, d))
    cross = np.zeros((d, T.shape[1]))
    for s in range(0, n, _CHUNK):
        block = np.asarray(X[s:s + _CHUNK], dtype=np.float64) - mean
        gram += block.T @ block
        cross += block.T @ (T[s:s + _CHUNK] - t_mean)
    trace = np.trace(gram)
    if trace <= 0:
        raise NumericError("all feature vectors are identical; regression is undetermined")
    gram[np.diag_indices(d)] += ridge * trace / d
    W = np.ascontiguousarray(np.linalg.solve(gram, cross).T)
    return W, t_mean - W @ mean


class LAG(BaseEstimator, TransformerMixin):
    """Label-assisted regression unit.

    Parameters
    ----------
    n_clusters : int, default=5
        Clusters per class (``L``).
    alpha : float, default=10.0
        Decay of the soft association with distance.
    ridge : float, default=1e-6
        Ridge term relative to the mean Gram-matrix eigenvalue.
    small_sample_ridge : float or None, default=0.1
        Ridge used instead when there are fewer than ``small_sample_ratio``
        samples per feature dimension; the tiny default ridge would let the
        regressor (nearly) interpolate its targets. ``None`` keeps ``ridge``
        everywhere.
    small_sample_ratio : float, default=10.0
    hard_targets : bool, default=False
        Use one-hot nearest-centroid targets instead of soft ones.
    random_state : int, default=0

    Attributes
    ----------
    centroids_ : ndarray of shape (J, L, n)
    weights_ : ndarray of shape (J*L, n)
    bias_ : ndarray of shape (J*L,)
    ridge_used_ : float
    """

    def __init__(self, n_clusters=5, alpha=10.0, ridge=1e-6, small_sample_ridge=0.1,
                 small_sample_ratio=10.0, hard_targets=False, random_state=0, max_iter=300,
                 tol=1e-4):
        self.n_clusters = n_clusters
        self.alpha = alpha
        self.ridge = ridge
        self.small_sample_ridge = small_sample_ridge
        self.small_sample_ratio = small_sample_ratio
        self.hard_targets = hard_targets
        self.random_state = random_state
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X = np.asarray(X)
        y = np.asarray(y)
        if X.ndim != 2 or len(X) != len(y):
            raise ArgumentError(f"need (N, n) features and N labels, got {X.shape} and {y.shape}")
        if self.alpha <= 0:
            raise ArgumentError(f"alpha must be positive, got {self.alpha}")
        self.classes_, codes = np.unique(y, return_inverse=True)
        self.centroids_ = kmeans_per_class(X, codes, self.n_clusters, len(self.classes_),
                                           self.random_state, self.max_iter, self.tol)
        T = soft_targets(X, codes, self.centroids_, self.alpha, self.hard_targets)
        self.ridge_used_ = self.ridge
        if self.small_sample_ridge is not None \
                and X.shape[0] < self.small_sample_ratio * X.shape[1]:
            self.ridge_used_ = max(self.ridge, self.small_sample_ridge)
        self.weights_, self.bias_ = least_squares(X, T, self.ridge_used_)
        self.n_features_in_ = X.shape[1]
        return self

    @property
    def n_outputs_(self):
        check_is_fitted(self)
        return len(self.bias_)

    def transform(self, X):
        check_is_fitted(self)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ArgumentError(
                f"expected features of dimension {self.n_features_in_}, got shape {X.shape}")
        return X @ self.weights_.T + self.bias_
