import os
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parent.parent


def data_dir():
    """``$PIXELHOP_DATA`` or, failing that, ``<repo>/data``; ``None`` when neither exists."""
    env = os.environ.get("PIXELHOP_DATA")
    for candidate in (env, REPO / "data"):
        if candidate and Path(candidate).is_dir():
            return Path(candidate)
    return None


def has_dataset(name):
    root = data_dir()
    return root is not None and (root / name).is_dir()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def data_root():
    root = data_dir()
    if root is None:
        pytest.skip("no dataset directory (set PIXELHOP_DATA)")
    return root


def require(name):
    return pytest.mark.skipif(not has_dataset(name), reason=f"{name} data not available")


def synthetic_images(n_per=20, n_classes=3, size=28, channels=1, seed=0, split="train"):
    """Noisy oriented stripes, one orientation and frequency per class."""
    from pixelhop.datasets import LabeledDataset

    rng = np.random.default_rng(seed)
    r, c = np.mgrid[0:size, 0:size]
    images, labels = [], []
    for label in range(n_classes):
        angle = np.pi * label / n_classes
        freq = 0.35 + 0.15 * label
        for _ in range(n_per):
            phase = rng.uniform(0, 2 * np.pi)
            wave = 0.5 + 0.5 * np.sin(freq * (np.cos(angle) * r + np.sin(angle) * c) + phase)
            img = np.clip(wave + 0.15 * rng.normal(size=(size, size)), 0, 1)
            images.append(np.repeat(img[..., None], channels, axis=2)
                          * (1 - 0.2 * np.arange(channels)))
            labels.append(label)
    images = np.array(images)
    names = ("gray",) if channels == 1 else ("R", "G", "B")[:channels]
    return LabeledDataset(images, np.array(labels), n_classes, split, names)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
