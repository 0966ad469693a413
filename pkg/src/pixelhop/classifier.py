"""Feature standardisation and an RBF-kernel SVM trained by SMO.

The multi-class SVM is one-vs-one. Each binary machine solves the standard
C-SVM dual

    min_a  1/2 a^T Q a - e^T a   s.t.  0 <= a_i <= C,  y^T a = 0,

with ``Q_ij = y_i y_j K(x_i, x_j)``, two coordinates at a time, picking the
maximal violating pair (or the second-order choice of the second index).
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ArgumentError, InsufficientDataError

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
TAU = 1e-12


class Standardizer(BaseEstimator, TransformerMixin):
    """Per-dimension z-score; constant dimensions map to zero."""

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or len(X) < 2:
            raise InsufficientDataError(f"standardisation needs at least 2 samples, got {X.shape}")
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), STD_FLOOR)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ArgumentError(
                f"expected {self.n_features_in_} features, got shape {X.shape}")
        return (X - self.mean_) / self.scale_


def rbf_kernel(A, B, gamma, sq_a=None, sq_b=None):
    sq_a = (A * A).sum(axis=1) if sq_a is None else sq_a
    sq_b = (B * B).sum(axis=1) if sq_b is None else sq_b
    d2 = sq_a[:, None] + sq_b[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


class KernelRows:
    """LRU cache of RBF kernel rows under a byte budget."""

    def __init__(self, X, gamma, cache_bytes):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.sq = (self.X * self.X).sum(axis=1)
        self.gamma = gamma
        self.max_rows = max(2, int(cache_bytes // (8 * len(self.X))))
        self._rows = OrderedDict()
        self.misses = 0

    def diag(self):
        return np.ones(len(self.X))

    def __getitem__(self, i):
        row = self._rows.get(i)
        if row is not None:
            self._rows.move_to_end(i)
            return row
        self.misses += 1
        d2 = self.sq + self.sq[i] - 2.0 * (self.X @ self.X[i])
        row = np.exp(-self.gamma * np.maximum(d2, 0.0))
        self._rows[i] = row
        if len(self._rows) > self.max_rows:
            self._rows.popitem(last=False)
        return row


@dataclass
class BinarySolution:
    alpha: np.ndarray
    rho: float
    iterations: int
    kkt_gap: float


def smo(kernel, y, C=1.0, tol=1e-3, max_iter=None, selection="mvp"):
    """Solve the binary C-SVM dual; ``kernel[i]`` must return row ``i`` of K.

    Returns the dual variables, the offset ``rho`` (decision is
    ``sum(alpha * y * K) - rho``), the iteration count and the final
    maximal KKT violation ``m(a) - M(a)``.
    """
    if selection not in ("mvp", "second_order"):
        raise ArgumentError(f"unknown working-set selection {selection!r}")
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    max_iter = max(100_000, 100 * n) if max_iter is None else max_iter
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    # membership of I_up / I_low, updated incrementally
    up = pos.copy()
    low = ~pos
    diag = kernel.diag()
    it = 0
    gap = np.inf
    while it < max_iter:
        yG = y * G
        score_up = np.where(up, -yG, -np.inf)
        i = int(np.argmax(score_up))
        g_max = score_up[i]
        score_low = np.where(low, -yG, np.inf)
        g_min_idx = int(np.argmin(score_low))
        gap = g_max - score_low[g_min_idx]
        if gap < tol:
            break
        Ki = kernel[i]
        if selection == "mvp":
            j = g_min_idx
        else:
            b = g_max + yG
            a = diag[i] + diag - 2.0 * Ki
            a = np.where(a > 0, a, TAU)
            cand = np.where(np.isfinite(score_low) & (b > 0), -(b * b) / a, np.inf)
            j = int(np.argmin(cand))
        Kj = kernel[j]
        yi, yj = y[i], y[j]
        ai_old, aj_old = alpha[i], alpha[j]
        Qij = yi * yj * Ki[j]
        if yi != yj:
            quad = diag[i] + diag[j] + 2.0 * Qij
            quad = quad if quad > 0 else TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai, aj = ai_old + delta, aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = diag[i] + diag[j] - 2.0 * Qij
            quad = quad if quad > 0 else TAU
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai, aj = ai_old - delta, aj_old + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    aj, ai = C, total - C
            else:
                if aj < 0:
                    aj, ai = 0.0, total
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        G += (yi * (ai - ai_old)) * y * Ki + (yj * (aj - aj_old)) * y * Kj
        for t in (i, j):
            up[t] = (pos[t] and alpha[t] < C) or (not pos[t] and alpha[t] > 0)
            low[t] = (not pos[t] and alpha[t] < C) or (pos[t] and alpha[t] > 0)
        it += 1
    else:
        logger.warning("SMO stopped at max_iter=%d with KKT gap %.3g", max_iter, gap)

    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_mask = (pos & (alpha >= C)) | (~pos & (alpha <= 0))
        lb_mask = (pos & (alpha <= 0)) | (~pos & (alpha >= C))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub + lb) else 0.0
    return BinarySolution(alpha, rho, it, float(gap))


def kkt_violation(K, y, alpha, C):
    """Maximal violating-pair gap ``m(a) - M(a)`` for a dense kernel matrix."""
    y = np.asarray(y, dtype=np.float64)
    G = (y[:, None] * y[None, :] * K) @ alpha - 1.0
    yG = y * G
    pos = y > 0
    up = (pos & (alpha < C)) | (~pos & (alpha > 0))
    low = (~pos & (alpha < C)) | (pos & (alpha > 0))
    return float((-yG[up]).max() - (-yG[low]).min())


def dual_objective(K, y, alpha):
    y = np.asarray(y, dtype=np.float64)
    v = alpha * y
    return float(0.5 * v @ K @ v - alpha.sum())


class SVC(BaseEstimator, ClassifierMixin):
    """One-vs-one RBF support vector classifier.

    Parameters
    ----------
    C : float, default=1.0
    gamma : float or "scale", default="scale"
        ``"scale"`` uses ``1 / (n_features * X.var())``.
    tol : float, default=1e-3
        KKT tolerance of every binary machine.
    cache_bytes : int, default=512 MiB
        Kernel-row cache budget per binary machine.
    selection : {"mvp", "second_order"}, default="mvp"
        Working-set rule for the second index.
    max_iter : int or None
        Iteration cap per machine (default ``max(1e5, 100 n)``).

    Attributes
    ----------
    classes_ : ndarray
    support_vectors_ : ndarray of shape (n_SV, F)
        Union of support vectors over all machines.
    machines_ : list of dict
        Per pair ``(a, b)``: ``sv`` indices into ``support_vectors_``,
        ``coef`` (``alpha * y``), ``alpha``, ``y``, ``rho`` and diagnostics.
    """

    def __init__(self, C=1.0, gamma="scale", tol=1e-3, cache_bytes=512 * 2 ** 20,
                 selection="mvp", max_iter=None):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.cache_bytes = cache_bytes
        self.selection = selection
        self.max_iter = max_iter

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2 or len(X) != len(y):
            raise ArgumentError(f"need (N, F) features and N labels, got {X.shape} and {y.shape}")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ArgumentError("SVC needs at least two classes")
        if self.C <= 0:
            raise ArgumentError(f"C must be positive, got {self.C}")
        if self.gamma == "scale":
            var = X.var()
            self.gamma_ = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        else:
            self.gamma_ = float(self.gamma)
        self.n_features_in_ = X.shape[1]

        machines = []
        sv_global = {}
        for a, b in combinations(range(len(self.classes_)), 2):
            idx = np.flatnonzero((y == self.classes_[a]) | (y == self.classes_[b]))
            yy = np.where(y[idx] == self.classes_[a], 1.0, -1.0)
            rows = KernelRows(X[idx], self.gamma_, self.cache_bytes)
            sol = smo(rows, yy, self.C, self.tol, self.max_iter, self.selection)
            sv = np.flatnonzero(sol.alpha > 0)
            logger.debug("machine %d-%d: n=%d, %d SVs, %d iterations, %d kernel rows",
                         a, b, len(idx), len(sv), sol.iterations, rows.misses)
            for g in idx[sv]:
                sv_global.setdefault(int(g), len(sv_global))
            machines.append({
                "pair": (a, b), "train_index": idx[sv], "alpha": sol.alpha[sv], "y": yy[sv],
                "rho": sol.rho, "iterations": sol.iterations, "kkt_gap": sol.kkt_gap,
            })
        order = np.array(sorted(sv_global), dtype=np.int64)
        position = {g: k for k, g in enumerate(order)}
        self.support_ = order
        self.support_vectors_ = X[order]
        for m in machines:
            m["sv"] = np.array([position[int(g)] for g in m.pop("train_index")], dtype=np.int64)
            m["coef"] = m["alpha"] * m["y"]
        self.machines_ = machines
        return self

    def _check_X(self, X):
        check_is_fitted(self)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ArgumentError(f"expected {self.n_features_in_} features, got shape {X.shape}")
        return X

    def _pair_decisions(self, X, batch_size=2000):
        X = self._check_X(X)
        out = np.empty((len(X), len(self.machines_)))
        sq_sv = (self.support_vectors_ ** 2).sum(axis=1)
        for s in range(0, len(X), batch_size):
            K = rbf_kernel(X[s:s + batch_size], self.support_vectors_, self.gamma_, sq_b=sq_sv)
            for m, mach in enumerate(self.machines_):
                out[s:s + batch_size, m] = K[:, mach["sv"]] @ mach["coef"] - mach["rho"]
        return out

    def decision_function(self, X):
        """Binary case: one column per sample; multi-class: one column per pair."""
        d = self._pair_decisions(X)
        return d[:, 0] if len(self.classes_) == 2 else d

    def predict(self, X):
        d = self._pair_decisions(X)
        votes = np.zeros((len(d), len(self.classes_)), dtype=np.int64)
        for m, mach in enumerate(self.machines_):
            a, b = mach["pair"]
            win = d[:, m] > 0
            votes[win, a] += 1
            votes[~win, b] += 1
        # argmax returns the first maximum: ties go to the lowest class index
        return self.classes_[np.argmax(votes, axis=1)]
