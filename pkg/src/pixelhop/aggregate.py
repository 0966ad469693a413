"""Spatial aggregation of unit outputs over non-overlapping blocks."""

import numpy as np

from .exceptions import ArgumentError

SCHEMES = ("mean", "min", "max", "skip")

# block size per unit for S_0 = 32: P = S/4, S/4, S/2, S/2
DEFAULT_BLOCKS = (4, 4, 2, 2)


def aggregate(maps, scheme="mean", block=2):
    """Reduce ``(..., S, S, K)`` maps to ``(..., S/block, S/block, K)``.

    ``skip`` keeps the top-left pixel of every block.
    """
    if scheme not in SCHEMES:
        raise ArgumentError(f"unknown aggregation scheme {scheme!r}; choose from {SCHEMES}")
    maps = np.asarray(maps)
    if maps.ndim < 3:
        raise ArgumentError(f"expected (..., S, S, K) maps, got shape {maps.shape}")
    h, w, k = maps.shape[-3:]
    if block < 1 or h % block or w % block:
        raise ArgumentError(f"block {block} does not divide spatial size {h}x{w}")
    if scheme == "skip":
        return maps[..., ::block, ::block, :]
    lead = maps.shape[:-3]
    blocks = maps.reshape(*lead, h // block, block, w // block, block, k)
    axes = (len(lead) + 1, len(lead) + 3)
    if scheme == "mean":
        return blocks.mean(axis=axes)
    if scheme == "min":
        return blocks.min(axis=axes)
    return blocks.max(axis=axes)


def flatten(maps):
    """Row-major flattening of ``(..., P, P, K)``, channels contiguous per pixel."""
    maps = np.asarray(maps)
    return maps.reshape(*maps.shape[:-3], -1)


def unflatten(vectors, p, k):
    vectors = np.asarray(vectors)
    return vectors.reshape(*vectors.shape[:-1], p, p, k)
