"""Dataset ingestion: IDX (MNIST, Fashion-MNIST) and CIFAR-10 binary files.

Images are held as a single ``(N, H, W, C)`` float array with values in
``[0, 1]``. Helpers for zero padding, color conversion, channel grouping and
seeded subsampling return new datasets and never modify their input.
"""

import gzip
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import ArgumentError, ConsistencyError, DataIOError, FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 32 * 32 * 3

DATA_ENV_VAR = "PIXELHOP_DATA"

_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
_CIFAR_FILES = {
    "train": [f"data_batch_{i}.bin" for i in range(1, 6)],
    "test": ["test_batch.bin"],
}
DATASET_NAMES = ("mnist", "fashion", "cifar10")


@dataclass(frozen=True)
class ImageTensor:
    """One ``H x W x C`` image with named channels."""

    data: np.ndarray
    channel_names: tuple = ("gray",)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


@dataclass(frozen=True)
class LabeledDataset:
    """A batch of equally shaped images and their class labels.

    Attributes
    ----------
    images : ndarray of shape (N, H, W, C)
    labels : ndarray of shape (N,), integer classes in ``[0, n_classes)``
    n_classes : int
    split : {"train", "test"}
    channel_names : tuple of str, one name per channel
    """

    images: np.ndarray
    labels: np.ndarray
    n_classes: int = 10
    split: str = "train"
    channel_names: tuple = field(default=("gray",))

    def __post_init__(self):
        if self.images.ndim != 4:
            raise ArgumentError(f"images must be (N, H, W, C), got shape {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ConsistencyError(
                f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.channel_names) != self.images.shape[3]:
            raise ConsistencyError(
                f"{len(self.channel_names)} channel names for {self.images.shape[3]} channels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConsistencyError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i):
        return ImageTensor(self.images[i], self.channel_names)

    @property
    def shape(self):
        return self.images.shape[1:]

    def take(self, indices):
        indices = np.asarray(indices)
        return replace(self, images=self.images[indices], labels=self.labels[indices])


def _read_bytes(path):
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    except FileNotFoundError as exc:
        raise DataIOError(f"no such file: {path}") from exc
    except (OSError, EOFError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


def _parse_idx(raw, expected_magic, path):
    if len(raw) < 8:
        raise DataIOError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataIOError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise DataIOError(f"{path}: expected {size} payload bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split="train", n_classes=10, dtype=np.float64):
    """Read an IDX image/label file pair (optionally gzip-compressed).

    Returns a dataset of ``H x W x 1`` images scaled to ``[0, 1]``.
    """
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABEL_MAGIC, labels_path)
    if len(images) != len(labels):
        raise ConsistencyError(
            f"{images_path} holds {len(images)} images but {labels_path} holds {len(labels)} labels")
    if labels.size and labels.max() >= n_classes:
        raise ConsistencyError(f"{labels_path}: label {labels.max()} outside [0, {n_classes})")
    data = (images[..., np.newaxis] / dtype(255.0)).astype(dtype, copy=False)
    return LabeledDataset(data, labels.astype(np.int64), n_classes, split, ("gray",))


def load_cifar10(batch_paths, split="train", dtype=np.float64):
    """Read CIFAR-10 binary batch files into ``32 x 32 x 3`` RGB images."""
    if isinstance(batch_paths, (str, os.PathLike)):
        batch_paths = [batch_paths]
    images, labels = [], []
    for path in batch_paths:
        raw = _read_bytes(path)
        if len(raw) == 0 or len(raw) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(raw)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if records[:, 0].max() > 9:
            raise ConsistencyError(f"{path}: label byte {records[:, 0].max()} > 9")
        labels.append(records[:, 0].astype(np.int64))
        # planar R, G, B -> interleaved H x W x C
        images.append(records[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
    data = (np.concatenate(images) / dtype(255.0)).astype(dtype, copy=False)
    return LabeledDataset(data, np.concatenate(labels), 10, split, ("R", "G", "B"))


def zero_pad(ds, target):
    """Center every image in a ``target x target`` frame of zeros."""
    _, h, w, c = ds.images.shape
    if target < h or target < w:
        raise ArgumentError(f"target {target} smaller than image size {h}x{w}")
    if (target - h) % 2 or (target - w) % 2:
        raise ArgumentError(f"cannot center {h}x{w} in {target}x{target}: odd margin")
    if target == h and target == w:
        return ds
    top, left = (target - h) // 2, (target - w) // 2
    out = np.zeros((len(ds), target, target, c), dtype=ds.images.dtype)
    out[:, top:top + h, left:left + w] = ds.images
    return replace(ds, images=out)


# Full-range BT.601, chroma offset 0.5 for [0, 1] inputs.
_YCBCR = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCBCR_OFFSET = np.array([0.0, 0.5, 0.5])

# sRGB (linear) -> XYZ, D65 white
_RGB2XYZ = np.array([
    [0.412453, 0.357580, 0.180423],
    [0.212671, 0.715160, 0.072169],
    [0.019334, 0.119193, 0.950227],
])
_D65 = np.array([0.95047, 1.0, 1.08883])


def rgb_to_ycbcr(rgb):
    return rgb @ _YCBCR.T + _YCBCR_OFFSET


def ycbcr_to_rgb(ycc):
    return (ycc - _YCBCR_OFFSET) @ np.linalg.inv(_YCBCR).T


def rgb_to_lab(rgb):
    """sRGB in ``[0, 1]`` to CIE Lab, rescaled to ``L/100``, ``(a+128)/255``, ``(b+128)/255``."""
    rgb = np.asarray(rgb, dtype=np.float64)
    lin = np.where(rgb > 0.04045, ((rgb + 0.055) / 1.055) ** 2.4, rgb / 12.92)
    xyz = (lin @ _RGB2XYZ.T) / _D65
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L / 100.0, (a + 128.0) / 255.0, (b + 128.0) / 255.0], axis=-1)


_COLOR_CHUNK = 4096

_COLOR_SPACES = {
    "rgb": (lambda x: x, ("R", "G", "B")),
    "ycbcr": (rgb_to_ycbcr, ("Y", "Cb", "Cr")),
    "lab": (rgb_to_lab, ("L", "a", "b")),
}


def convert_color(ds, space):
    """Convert an RGB dataset to ``rgb``, ``ycbcr`` or ``lab``."""
    if space not in _COLOR_SPACES:
        raise ArgumentError(f"unknown color space {space!r}; choose from {sorted(_COLOR_SPACES)}")
    if ds.images.shape[3] != 3:
        raise ArgumentError(f"color conversion needs 3 channels, got {ds.images.shape[3]}")
    func, names = _COLOR_SPACES[space]
    out = np.empty_like(ds.images)
    for s in range(0, len(out), _COLOR_CHUNK):
        out[s:s + _COLOR_CHUNK] = func(ds.images[s:s + _COLOR_CHUNK])
    return replace(ds, images=out, channel_names=names)


def split_channels(ds, grouping):
    """Split a dataset into one dataset per channel group, e.g. ``[[0], [1, 2]]``."""
    c = ds.images.shape[3]
    flat = [i for group in grouping for i in group]
    if not grouping or any(len(g) == 0 for g in grouping):
        raise ArgumentError("channel groups must be non-empty")
    if any(not 0 <= i < c for i in flat):
        raise ArgumentError(f"channel index out of range for {c} channels: {grouping}")
    if len(set(flat)) != len(flat):
        raise ArgumentError(f"channel groups overlap: {grouping}")
    return [
        replace(ds, images=ds.images[..., list(g)],
                channel_names=tuple(ds.channel_names[i] for i in g))
        for g in grouping
    ]


def subsample_indices(n, fraction, seed):
    if not 0 < fraction <= 1:
        raise ArgumentError(f"fraction must be in (0, 1], got {fraction}")
    size = int(np.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False))


def subsample(ds, fraction, seed=0):
    """Uniform random subset of ``round(fraction * N)`` samples, original order kept."""
    return ds.take(subsample_indices(len(ds), fraction, seed))


def _find(root, name):
    for candidate in (root / name, root / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise DataIOError(f"cannot find {name}[.gz] under {root}")


def data_root(root=None):
    root = root or os.environ.get(DATA_ENV_VAR)
    if root is None:
        raise DataIOError(f"no data directory given and ${DATA_ENV_VAR} is unset")
    return Path(root)


def dataset_files(name, split="train", root=None):
    """Paths of the files :func:`load_dataset` reads for ``name`` and ``split``."""
    if name not in DATASET_NAMES:
        raise ArgumentError(f"unknown dataset {name!r}; choose from {DATASET_NAMES}")
    if split not in ("train", "test"):
        raise ArgumentError(f"split must be 'train' or 'test', got {split!r}")
    base = data_root(root) / name
    names = _CIFAR_FILES[split] if name == "cifar10" else _IDX_FILES[split]
    return [_find(base, f) for f in names]


def load_dataset(name, split="train", root=None, dtype=np.float64):
    """Load a named dataset from ``root/<name>/``.

    Expected layouts::

        mnist/   train-images-idx3-ubyte[.gz] ...  t10k-labels-idx1-ubyte[.gz]
        fashion/ same file names as mnist
        cifar10/ data_batch_{1..5}.bin, test_batch.bin
    """
    files = dataset_files(name, split, root)
    if name == "cifar10":
        return load_cifar10(files, split=split, dtype=dtype)
    return load_idx(files[0], files[1], split=split, dtype=dtype)
