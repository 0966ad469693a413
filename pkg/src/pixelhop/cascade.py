"""Cascade of PixelHop units.

Each unit concatenates the attributes of a pixel and its eight neighbours
(3x3 window, row-major, channels contiguous per window position) and reduces
the ``9K`` vector with a Saab transform. Units are separated by 2x2 max
pooling. Feature maps are ``(N, S, S, K)`` arrays.
"""

import logging
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .aggregate import aggregate, flatten
from .exceptions import ArgumentError, DataIOError, InsufficientDataError
from .saab import Saab

logger = logging.getLogger(__name__)

NEIGHBOR_COUNT = 8
_OFFSETS = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
PADDING_MODES = ("edge", "zero")
# patches per batch when a unit streams all of its patches
_STREAM_PATCHES = 65_536


def _as_batch(maps):
    maps = np.asarray(maps)
    if maps.ndim == 3:
        return maps[np.newaxis], True
    if maps.ndim != 4:
        raise ArgumentError(f"feature maps must be (S, S, K) or (N, S, S, K), got {maps.shape}")
    return maps, False


def gather_neighborhood(maps, padding="edge"):
    """Concatenate each pixel's 3x3 window into a ``9K`` attribute vector.

    Spatial size is preserved; borders use edge replication (``"edge"``) or
    zeros (``"zero"``).
    """
    if padding not in PADDING_MODES:
        raise ArgumentError(f"padding must be one of {PADDING_MODES}, got {padding!r}")
    batch, single = _as_batch(maps)
    _, h, w, _ = batch.shape
    mode = "edge" if padding == "edge" else "constant"
    padded = np.pad(batch, ((0, 0), (1, 1), (1, 1), (0, 0)), mode=mode)
    out = np.concatenate(
        [padded[:, 1 + dr:1 + dr + h, 1 + dc:1 + dc + w, :] for dr, dc in _OFFSETS], axis=-1)
    return out[0] if single else out


def sample_neighborhoods(maps, positions, padding="edge"):
    """3x3 window vectors at flat positions ``n * S * S + r * S + c``."""
    n_img, h, w, k = maps.shape
    n, rem = np.divmod(positions, h * w)
    r, c = np.divmod(rem, w)
    out = np.empty((len(positions), 9 * k), dtype=np.float64)
    for j, (dr, dc) in enumerate(_OFFSETS):
        rr, cc = r + dr, c + dc
        if padding == "edge":
            vals = maps[n, np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
        else:
            inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            vals = maps[n, np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)] * inside[:, None]
        out[:, j * k:(j + 1) * k] = vals
    return out


def max_pool(maps):
    """Non-overlapping 2x2 max pooling."""
    batch, single = _as_batch(maps)
    n, h, w, k = batch.shape
    if h % 2 or w % 2:
        raise ArgumentError(f"max pooling needs an even spatial size, got {h}x{w}")
    out = batch.reshape(n, h // 2, 2, w // 2, 2, k).max(axis=(2, 4))
    return out[0] if single else out


@dataclass
class PixelHopUnit:
    """One fitted stage: neighbourhood concatenation followed by Saab."""

    stage: int
    input_spectral: int
    saab: Saab
    padding: str = "edge"
    neighbor_count: int = NEIGHBOR_COUNT

    @property
    def concat_dim(self):
        return self.input_spectral * (self.neighbor_count + 1)

    @property
    def output_spectral(self):
        return self.saab.n_components_

    def apply(self, maps):
        batch, single = _as_batch(maps)
        n, h, w, k = batch.shape
        if k != self.input_spectral:
            raise ArgumentError(
                f"unit {self.stage} expects {self.input_spectral} input channels, got {k}")
        patches = gather_neighborhood(batch, self.padding).reshape(-1, self.concat_dim)
        out = self.saab.transform(patches).reshape(n, h, w, self.output_spectral)
        return out[0] if single else out


def fit_unit(maps, stage=1, energy_threshold=0.97, patch_sample_limit=100_000,
             padding="edge", random_state=0, bias_on_dc=False):
    """Fit a PixelHop unit on ``(N, S, S, K)`` maps from a seeded patch sample.

    With ``patch_sample_limit=None`` (or a limit above the patch count) every
    patch is used, streamed in image batches so the patch matrix is never built.
    """
    maps, _ = _as_batch(maps)
    n, h, w, k = maps.shape
    total = n * h * w
    if total < 2:
        raise InsufficientDataError(f"unit {stage}: need at least 2 patches, got {total}")
    saab = Saab(energy_threshold=energy_threshold, bias_on_dc=bias_on_dc)
    if patch_sample_limit is None or patch_sample_limit >= total:
        step = max(1, _STREAM_PATCHES // (h * w))

        def batches():
            for s in range(0, n, step):
                yield gather_neighborhood(maps[s:s + step], padding).reshape(-1, 9 * k)

        saab.fit_stream(batches)
    else:
        rng = np.random.default_rng(random_state)
        positions = np.sort(rng.choice(total, size=int(patch_sample_limit), replace=False))
        if len(positions) < 2:
            raise InsufficientDataError(f"unit {stage}: patch sample limit below 2")
        saab.fit(sample_neighborhoods(maps, positions, padding))
    return PixelHopUnit(stage=stage, input_spectral=k, saab=saab, padding=padding)


def _per_unit(value, n_units, name):
    if np.isscalar(value) or value is None:
        return [value] * n_units
    value = list(value)
    if len(value) != n_units:
        raise ArgumentError(f"{name} needs {n_units} entries, got {len(value)}")
    return value


class PixelHop(BaseEstimator, TransformerMixin):
    """Unsupervised cascade of PixelHop units.

    Parameters
    ----------
    n_units : int, default=4
    energy_threshold : float or sequence of float, default=0.97
        Saab energy ratio, either shared by all units or one per unit.
    padding : {"edge", "zero"}, default="edge"
        Border handling for the 3x3 neighbourhood.
    patch_sample_limit : int or None, default=100_000
        Patches sampled per unit to estimate the Saab covariance.
    batch_size : int, default=1000
        Images processed at once when propagating through the cascade.
    random_state : int, default=0
    bias_on_dc : bool, default=False

    Attributes
    ----------
    units_ : list of PixelHopUnit
    spatial_sizes_ : list of int
        ``S_0 .. S_I``; unit ``i`` (1-based) works at ``S_{i-1}``.
    """

    def __init__(self, n_units=4, energy_threshold=0.97, padding="edge",
                 patch_sample_limit=100_000, batch_size=1000, random_state=0,
                 bias_on_dc=False):
        self.n_units = n_units
        self.energy_threshold = energy_threshold
        self.padding = padding
        self.patch_sample_limit = patch_sample_limit
        self.batch_size = batch_size
        self.random_state = random_state
        self.bias_on_dc = bias_on_dc

    def _check_input(self, X):
        X = np.asarray(X)
        if X.ndim != 4:
            raise ArgumentError(f"images must be (N, H, W, C), got shape {X.shape}")
        _, h, w, _ = X.shape
        if h != w:
            raise ArgumentError(f"images must be square, got {h}x{w}")
        if self.n_units < 1:
            raise ArgumentError("n_units must be at least 1")
        if h % (2 ** (self.n_units - 1)):
            raise ArgumentError(
                f"size {h} is not divisible by 2^{self.n_units - 1} for {self.n_units} units")
        return X

    def fit(self, X, y=None):
        # y is accepted for Pipeline compatibility and deliberately ignored
        X = self._check_input(X)
        thresholds = _per_unit(self.energy_threshold, self.n_units, "energy_threshold")
        seeds = np.random.SeedSequence(self.random_state).generate_state(self.n_units)
        self.units_ = []
        self.spatial_sizes_ = [X.shape[1]]
        current = X
        for i in range(self.n_units):
            unit = fit_unit(current, stage=i + 1, energy_threshold=thresholds[i],
                            patch_sample_limit=self.patch_sample_limit, padding=self.padding,
                            random_state=int(seeds[i]), bias_on_dc=self.bias_on_dc)
            self.units_.append(unit)
            logger.info("unit %d: %dx%d, %d -> %d channels", i + 1, current.shape[1],
                        current.shape[2], unit.concat_dim, unit.output_spectral)
            if i + 1 < self.n_units:
                current = self._propagate(unit, current)
                self.spatial_sizes_.append(current.shape[1])
        self.spatial_sizes_.append(self.spatial_sizes_[-1] // 2)
        return self

    def _propagate(self, unit, maps):
        n, h, w, _ = maps.shape
        out = np.empty((n, h // 2, w // 2, unit.output_spectral), dtype=np.float32)
        for s in range(0, n, self.batch_size):
            out[s:s + self.batch_size] = max_pool(unit.apply(maps[s:s + self.batch_size]))
        return out

    @property
    def output_channels_(self):
        check_is_fitted(self)
        return [u.output_spectral for u in self.units_]

    def _forward(self, batch):
        outputs = []
        current = batch
        for i, unit in enumerate(self.units_):
            out = unit.apply(current)
            outputs.append(out)
            if i + 1 < len(self.units_):
                current = max_pool(out)
        return outputs

    def _check_fitted_input(self, X):
        check_is_fitted(self)
        X = np.asarray(X)
        if X.ndim != 4 or X.shape[1] != self.spatial_sizes_[0] or X.shape[2] != self.spatial_sizes_[0] \
                or X.shape[3] != self.units_[0].input_spectral:
            raise ArgumentError(
                f"expected images of shape (N, {self.spatial_sizes_[0]}, {self.spatial_sizes_[0]}, "
                f"{self.units_[0].input_spectral}), got {X.shape}")
        return X

    def transform(self, X):
        """Per-unit output maps before pooling, ``[(N, S_{i-1}, S_{i-1}, K_i), ...]``."""
        X = self._check_fitted_input(X)
        return self._forward(X)

    def transform_aggregated(self, X, schemes=("mean",), blocks=(4, 4, 2, 2), dtype=np.float64):
        """Aggregate each unit's output per scheme and flatten, in image batches.

        Returns ``features[unit][scheme]`` arrays of shape ``(N, P*P*K)``.
        Avoids materialising the full-resolution maps for the whole set;
        ``dtype=np.float32`` halves the memory of the result.
        """
        X = self._check_fitted_input(X)
        blocks = _per_unit(blocks, len(self.units_), "blocks")
        n = len(X)
        result = None
        for s in range(0, n, self.batch_size):
            outputs = self._forward(X[s:s + self.batch_size])
            if result is None:
                result = []
                for out, block in zip(outputs, blocks):
                    p = out.shape[1] // block
                    result.append({sc: np.empty((n, p * p * out.shape[3]), dtype=dtype)
                                   for sc in schemes})
            for i, (out, block) in enumerate(zip(outputs, blocks)):
                for sc in schemes:
                    result[i][sc][s:s + self.batch_size] = flatten(aggregate(out, sc, block))
        return result


def dump_feature_map(fm, path):
    """Write one ``S x S x K`` map: three little-endian uint32 counts then float64 data."""
    fm = np.asarray(fm, dtype="<f8")
    if fm.ndim != 3:
        raise ArgumentError(f"expected an (S, S, K) map, got {fm.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack("<3I", *fm.shape))
        f.write(np.ascontiguousarray(fm).tobytes())


def load_feature_map(path):
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise DataIOError(f"{path}: truncated feature map header")
    shape = struct.unpack("<3I", raw[:12])
    if len(raw) != 12 + 8 * int(np.prod(shape)):
        raise DataIOError(f"{path}: payload size does not match header {shape}")
    return np.frombuffer(raw, dtype="<f8", offset=12).reshape(shape).copy()
