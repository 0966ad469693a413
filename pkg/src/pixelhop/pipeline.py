"""End-to-end training, inference and evaluation.

For every channel group an unsupervised PixelHop cascade is fitted, each
unit's output is aggregated per scheme, and one LAG regressor per
``(group, unit, scheme)`` turns it into ``J * L`` attributes. The attributes
are concatenated, standardised and classified by an RBF SVM.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .aggregate import DEFAULT_BLOCKS
from .cascade import PixelHop
from .classifier import SVC, Standardizer
from .config import ConfigError, PipelineConfig
from .datasets import convert_color, subsample_indices, zero_pad
from .exceptions import ArgumentError, NumericError, PixelHopError
from .lag import LAG

logger = logging.getLogger(__name__)


@contextmanager
def phase(name, timings=None):
    """Tag package errors with ``name`` and add the elapsed time to ``timings``."""
    start = time.perf_counter()
    try:
        yield
    except PixelHopError as exc:
        if exc.phase is None:
            exc.phase = name
        raise
    except np.linalg.LinAlgError as exc:
        raise NumericError(str(exc), phase=name) from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


class PixelHopClassifier(BaseEstimator, ClassifierMixin):
    """PixelHop feature extraction followed by an RBF SVM.

    Works on prepared ``(N, S, S, C)`` image arrays; padding and colour
    conversion happen in :func:`prepare_images`.

    Parameters
    ----------
    n_units, energy_threshold, padding, patch_sample_limit, bias_on_dc
        Cascade settings, see :class:`pixelhop.cascade.PixelHop`.
    schemes : sequence of str, default=("mean",)
        Aggregation schemes; each gets its own LAG per unit.
    blocks : sequence of int, default=(4, 4, 2, 2)
        Aggregation block size per unit.
    channel_groups : list of list of int or None
        Channels processed by independent cascades; ``None`` keeps all
        channels in one group.
    n_clusters, alpha, ridge, small_sample_ridge, small_sample_ratio, hard_targets
        LAG settings.
    C, gamma, svm_tol, svm_selection, cache_mb
        SVM settings.
    batch_size : int, default=1000
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray
    cascades_ : list of PixelHop
        One fitted cascade per channel group.
    lags_ : dict
        ``(group, unit, scheme) -> LAG``.
    block_keys_ : list of tuple
        Column order of the feature vector, one ``M``-wide block per key.
    standardizer_ : Standardizer
    svc_ : SVC
    timings_ : dict
        Wall-clock seconds per training phase.
    """

    def __init__(self, n_units=4, energy_threshold=0.97, padding="edge",
                 patch_sample_limit=100_000, bias_on_dc=False, schemes=("mean",),
                 blocks=DEFAULT_BLOCKS, channel_groups=None, n_clusters=5, alpha=10.0,
                 ridge=1e-6, small_sample_ridge=0.1, small_sample_ratio=10.0, hard_targets=False,
                 C=1.0, gamma="scale", svm_tol=1e-3, svm_selection="mvp", cache_mb=512,
                 batch_size=1000, random_state=0):
        self.n_units = n_units
        self.energy_threshold = energy_threshold
        self.padding = padding
        self.patch_sample_limit = patch_sample_limit
        self.bias_on_dc = bias_on_dc
        self.schemes = schemes
        self.blocks = blocks
        self.channel_groups = channel_groups
        self.n_clusters = n_clusters
        self.alpha = alpha
        self.ridge = ridge
        self.small_sample_ridge = small_sample_ridge
        self.small_sample_ratio = small_sample_ratio
        self.hard_targets = hard_targets
        self.C = C
        self.gamma = gamma
        self.svm_tol = svm_tol
        self.svm_selection = svm_selection
        self.cache_mb = cache_mb
        self.batch_size = batch_size
        self.random_state = random_state

    @classmethod
    def from_config(cls, config):
        return cls(
            n_units=config.n_units, energy_threshold=config.energy_threshold,
            padding=config.padding, patch_sample_limit=config.patch_sample_limit,
            bias_on_dc=config.bias_on_dc, schemes=tuple(config.schemes),
            blocks=tuple(config.blocks), channel_groups=config.channel_groups,
            n_clusters=config.n_clusters, alpha=config.alpha, ridge=config.ridge,
            small_sample_ridge=config.small_sample_ridge,
            small_sample_ratio=config.small_sample_ratio,
            hard_targets=config.hard_targets, C=config.C, gamma=config.gamma,
            svm_tol=config.svm_tol, svm_selection=config.svm_selection,
            cache_mb=config.cache_mb, batch_size=config.batch_size, random_state=config.seed)

    def _groups(self, n_channels):
        groups = self.channel_groups or [list(range(n_channels))]
        flat = [c for g in groups for c in g]
        if any(not 0 <= c < n_channels for c in flat) or len(set(flat)) != len(flat):
            raise ArgumentError(f"channel groups {groups} invalid for {n_channels} channels")
        return [list(g) for g in groups]

    def _seeds(self):
        cascade_seq, lag_seq = np.random.SeedSequence(self.random_state).spawn(2)
        return cascade_seq, lag_seq

    def _make_cascade(self, seed):
        return PixelHop(n_units=self.n_units, energy_threshold=self.energy_threshold,
                        padding=self.padding, patch_sample_limit=self.patch_sample_limit,
                        batch_size=self.batch_size, random_state=int(seed),
                        bias_on_dc=self.bias_on_dc)

    def fit_cascades(self, X):
        """Fit only the unsupervised cascades (same seeds as :meth:`fit`)."""
        X = np.asarray(X)
        groups = self._groups(X.shape[3])
        seeds = self._seeds()[0].generate_state(len(groups))
        return [self._make_cascade(seeds[g]).fit(X[..., ch]) for g, ch in enumerate(groups)]

    def _make_svc(self):
        return SVC(C=self.C, gamma=self.gamma, tol=self.svm_tol,
                   cache_bytes=int(self.cache_mb * 2 ** 20), selection=self.svm_selection)

    def fit(self, X, y):
        X = np.asarray(X)
        y = np.asarray(y)
        if X.ndim != 4:
            raise ArgumentError(f"images must be (N, S, S, C), got shape {X.shape}")
        if len(X) != len(y):
            raise ArgumentError(f"{len(X)} images but {len(y)} labels")
        self.timings_ = {}
        self.classes_ = np.unique(y)
        self.groups_ = self._groups(X.shape[3])
        self.image_shape_ = tuple(X.shape[1:])
        cascade_seq, lag_seq = self._seeds()
        cascade_seeds = cascade_seq.generate_state(len(self.groups_))
        lag_seeds = iter(lag_seq.generate_state(len(self.groups_) * self.n_units
                                                * len(self.schemes)))
        self.cascades_ = []
        self.lags_ = {}
        blocks = {}
        for g, channels in enumerate(self.groups_):
            Xg = X[..., channels]
            with phase("cascade", self.timings_):
                # the cascade never sees labels
                cascade = self._make_cascade(cascade_seeds[g]).fit(Xg)
            self.cascades_.append(cascade)
            for scheme in self.schemes:
                with phase("aggregate", self.timings_):
                    feats = cascade.transform_aggregated(Xg, (scheme,), self.blocks,
                                                         dtype=np.float32)
                for u in range(self.n_units):
                    with phase("lag", self.timings_):
                        lag = LAG(n_clusters=self.n_clusters, alpha=self.alpha,
                                  ridge=self.ridge,
                                  small_sample_ridge=self.small_sample_ridge,
                                  small_sample_ratio=self.small_sample_ratio,
                                  hard_targets=self.hard_targets,
                                  random_state=int(next(lag_seeds)))
                        lag.fit(feats[u][scheme], y)
                        self.lags_[(g, u, scheme)] = lag
                        blocks[(g, u, scheme)] = lag.transform(feats[u][scheme])
                    feats[u][scheme] = None
                del feats
        self.block_keys_ = [(g, u, s) for g in range(len(self.groups_))
                            for u in range(self.n_units) for s in self.schemes]
        Z = np.hstack([blocks[k] for k in self.block_keys_])
        del blocks
        with phase("standardize", self.timings_):
            self.standardizer_ = Standardizer().fit(Z)
            Z = self.standardizer_.transform(Z)
        with phase("classifier", self.timings_):
            self.svc_ = self._make_svc().fit(Z, y)
        self.n_features_out_ = Z.shape[1]
        logger.info("trained on %d images, F=%d, %d support vectors, timings %s", len(X),
                    Z.shape[1], len(self.svc_.support_), self.timings_)
        return self

    def _check_images(self, X):
        check_is_fitted(self)
        X = np.asarray(X)
        if X.ndim != 4 or tuple(X.shape[1:]) != self.image_shape_:
            raise ArgumentError(
                f"expected images of shape (N, {', '.join(map(str, self.image_shape_))}), "
                f"got {X.shape}")
        return X

    def feature_blocks(self, X):
        """LAG outputs per ``(group, unit, scheme)`` key, each ``(N, M)``."""
        X = self._check_images(X)
        out = {}
        for g, channels in enumerate(self.groups_):
            Xg = X[..., channels]
            for scheme in self.schemes:
                feats = self.cascades_[g].transform_aggregated(Xg, (scheme,), self.blocks,
                                                                dtype=np.float32)
                for u in range(self.n_units):
                    out[(g, u, scheme)] = self.lags_[(g, u, scheme)].transform(feats[u][scheme])
        return out

    def transform(self, X):
        """Concatenated LAG attributes ``(N, F)`` before standardisation."""
        blocks = self.feature_blocks(X)
        return np.hstack([blocks[k] for k in self.block_keys_])

    def decision_function(self, X):
        return self.svc_.decision_function(self.standardizer_.transform(self.transform(X)))

    def predict(self, X):
        with phase("inference"):
            return self.svc_.predict(self.standardizer_.transform(self.transform(X)))

    @property
    def n_features_(self):
        """``groups * schemes * units * J * L``."""
        check_is_fitted(self)
        return len(self.block_keys_) * self.lags_[self.block_keys_[0]].n_outputs_


@dataclass
class TrainedPipeline:
    """A fitted classifier together with the configuration that prepares its inputs."""

    config: PipelineConfig
    model: PixelHopClassifier
    info: dict = field(default_factory=dict)

    @property
    def n_features(self):
        return self.model.n_features_


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    counts: np.ndarray
    n_samples: int
    timings: dict = field(default_factory=dict)
    per_unit: dict = None

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "n_samples": self.n_samples,
            "confusion": self.confusion.tolist(),
            "counts": self.counts.tolist(),
            "per_unit_accuracy": self.per_unit,
            "timings": self.timings,
        }


def prepare_images(ds, config):
    """Pad, colour-convert and cast a dataset for ``config``; returns ``(N, S, S, C)`` float32."""
    c = ds.images.shape[3]
    if config.color_space is None and c != 1:
        raise ConfigError(f"color mode 'gray' needs 1-channel images, dataset has {c}")
    if config.color_space is not None and c != 3:
        raise ConfigError(f"color mode {config.color_mode!r} needs RGB images, dataset has {c}")
    if config.pad_to is not None and ds.images.shape[1] != config.pad_to:
        ds = zero_pad(ds, config.pad_to)
    if config.color_space is not None:
        ds = convert_color(ds, config.color_space)
    return np.asarray(ds.images, dtype=np.float32)


def train(config, train_ds):
    """Fit the whole pipeline in one pass; honours ``config.train_fraction``."""
    timings = {}
    with phase("data", timings):
        if config.train_fraction < 1:
            idx = subsample_indices(len(train_ds), config.train_fraction, config.seed)
            train_ds = train_ds.take(idx)
        X = prepare_images(train_ds, config)
        y = train_ds.labels
    model = PixelHopClassifier.from_config(config).fit(X, y)
    timings.update(model.timings_)
    info = {"n_train": int(len(y)), "seed": config.seed, "timings": timings,
            "n_features": model.n_features_,
            "unit_channels": [c.output_channels_ for c in model.cascades_]}
    return TrainedPipeline(config, model, info)


def infer(tp, ds, batch_size=None):
    """Class predictions for every image of ``ds``."""
    X = prepare_images(ds, tp.config)
    if batch_size is None:
        return tp.model.predict(X)
    return np.concatenate([tp.model.predict(X[s:s + batch_size])
                           for s in range(0, len(X), batch_size)])


def confusion_counts(y_true, y_pred, n_classes):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    return np.bincount(y_true * n_classes + y_pred,
                       minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def row_normalize(counts):
    """Rows divided by their totals; classes absent from the data keep an all-zero row."""
    counts = np.asarray(counts, dtype=np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def report_from_predictions(y_true, y_pred, n_classes, timings=None):
    counts = confusion_counts(y_true, y_pred, n_classes)
    return EvalReport(accuracy=float(np.trace(counts) / max(counts.sum(), 1)),
                      confusion=row_normalize(counts), counts=counts,
                      n_samples=int(counts.sum()), timings=dict(timings or {}))


def unit_accuracies(tp, train_ds, test_ds):
    """Accuracy of a standardiser + SVM retrained on one unit's attributes at a time.

    Returns ``{unit_number: accuracy}`` with 1-based unit numbers. All
    channel groups and schemes of that unit are used together.
    """
    model = tp.model
    train_blocks = model.feature_blocks(prepare_images(train_ds, tp.config))
    test_blocks = model.feature_blocks(prepare_images(test_ds, tp.config))
    out = {}
    for u in range(model.n_units):
        keys = [k for k in model.block_keys_ if k[1] == u]
        Ztr = np.hstack([train_blocks[k] for k in keys])
        Zte = np.hstack([test_blocks[k] for k in keys])
        with phase(f"unit {u + 1} classifier"):
            std = Standardizer().fit(Ztr)
            svc = model._make_svc().fit(std.transform(Ztr), train_ds.labels)
            pred = svc.predict(std.transform(Zte))
        out[u + 1] = float(np.mean(pred == test_ds.labels))
    return out


def evaluate(tp, ds, train_ds=None):
    """Accuracy and row-normalised confusion matrix on a labelled dataset.

    Passing the training set as ``train_ds`` adds per-unit accuracies.
    """
    timings = {}
    with phase("inference", timings):
        pred = infer(tp, ds)
    report = report_from_predictions(ds.labels, pred, ds.n_classes, timings)
    if train_ds is not None:
        with phase("per-unit", timings):
            if tp.config.train_fraction < 1:
                train_ds = train_ds.take(subsample_indices(
                    len(train_ds), tp.config.train_fraction, tp.config.seed))
            report.per_unit = unit_accuracies(tp, train_ds, ds)
        report.timings = timings
    return report


def sweep(config, train_ds, test_ds, fractions, seeds):
    """Train and evaluate for every ``(fraction, seed)``.

    Returns ``(runs, summary)``: one dict per run and one per fraction with
    mean and sample standard deviation of the accuracy.
    """
    fractions = [float(f) for f in fractions]
    if any(not 0 < f <= 1 for f in fractions):
        raise ConfigError(f"fractions must lie in (0, 1], got {fractions}")
    runs = []
    for fraction in fractions:
        for seed in seeds:
            cfg = config.with_overrides({"train_fraction": fraction, "seed": int(seed)})
            tp = train(cfg, train_ds)
            report = evaluate(tp, test_ds)
            runs.append({"fraction": fraction, "seed": int(seed),
                         "n_train": tp.info["n_train"], "accuracy": report.accuracy})
            logger.info("fraction %g seed %d: %.4f", fraction, seed, report.accuracy)
    summary = []
    for fraction in fractions:
        accs = np.array([r["accuracy"] for r in runs if r["fraction"] == fraction])
        summary.append({"fraction": fraction,
                        "n_train": next(r["n_train"] for r in runs if r["fraction"] == fraction),
                        "n_seeds": len(accs), "mean_accuracy": float(accs.mean()),
                        "std_accuracy": float(accs.std(ddof=1)) if len(accs) > 1 else 0.0})
    return runs, summary
