"""Pipeline configuration, named presets and override parsing."""

import json
from dataclasses import asdict, dataclass, fields
from fractions import Fraction
from pathlib import Path

from .aggregate import DEFAULT_BLOCKS, SCHEMES
from .cascade import PADDING_MODES
from .datasets import DATASET_NAMES
from .exceptions import ArgumentError


class ConfigError(ArgumentError):
    """Unknown key, bad value or unreadable configuration file."""


# color mode -> (color space or None, channel groups)
COLOR_MODES = {
    "gray": (None, [[0]]),
    "rgb": ("rgb", [[0, 1, 2]]),
    "r,g,b": ("rgb", [[0], [1], [2]]),
    "ycbcr": ("ycbcr", [[0, 1, 2]]),
    "y,cbcr": ("ycbcr", [[0], [1, 2]]),
    "y": ("ycbcr", [[0]]),
    "lab": ("lab", [[0, 1, 2]]),
    "l,ab": ("lab", [[0], [1, 2]]),
}


@dataclass(frozen=True)
class PipelineConfig:
    dataset: str = "mnist"
    color_mode: str = "gray"
    pad_to: int = 32
    n_units: int = 4
    energy_threshold: object = 0.97
    padding: str = "edge"
    patch_sample_limit: object = 100_000
    bias_on_dc: bool = False
    schemes: tuple = ("mean",)
    blocks: tuple = DEFAULT_BLOCKS
    n_clusters: int = 5
    alpha: float = 10.0
    ridge: float = 1e-6
    small_sample_ridge: object = 0.1
    small_sample_ratio: float = 10.0
    hard_targets: bool = False
    C: float = 1.0
    gamma: object = "scale"
    svm_tol: float = 1e-3
    svm_selection: str = "mvp"
    cache_mb: int = 512
    train_fraction: float = 1.0
    seed: int = 0
    batch_size: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "schemes", tuple(self.schemes))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if isinstance(self.energy_threshold, list):
            object.__setattr__(self, "energy_threshold", tuple(self.energy_threshold))
        self.validate()

    def validate(self):
        if self.dataset not in DATASET_NAMES:
            raise ConfigError(f"dataset must be one of {DATASET_NAMES}, got {self.dataset!r}")
        if self.color_mode not in COLOR_MODES:
            raise ConfigError(f"color_mode must be one of {sorted(COLOR_MODES)}, got {self.color_mode!r}")
        if self.n_units < 1:
            raise ConfigError("n_units must be at least 1")
        thresholds = self.energy_threshold if isinstance(self.energy_threshold, tuple) \
            else (self.energy_threshold,)
        if isinstance(self.energy_threshold, tuple) and len(thresholds) != self.n_units:
            raise ConfigError(f"energy_threshold needs one value or {self.n_units} values")
        if any(not 0 < t <= 1 for t in thresholds):
            raise ConfigError(f"energy_threshold values must lie in (0, 1], got {self.energy_threshold}")
        if self.padding not in PADDING_MODES:
            raise ConfigError(f"padding must be one of {PADDING_MODES}")
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise ConfigError(f"schemes must be a non-empty subset of {SCHEMES}, got {self.schemes}")
        if len(self.blocks) != self.n_units:
            raise ConfigError(f"blocks needs {self.n_units} entries, got {len(self.blocks)}")
        if self.pad_to is not None:
            size = self.pad_to
            for i, block in enumerate(self.blocks):
                if size % block:
                    raise ConfigError(f"block {block} does not divide unit {i + 1} size {size}")
                size //= 2
        if not 0 < self.train_fraction <= 1:
            raise ConfigError(f"train_fraction must be in (0, 1], got {self.train_fraction}")
        if self.alpha <= 0 or self.C <= 0:
            raise ConfigError("alpha and C must be positive")
        if self.ridge < 0 or (self.small_sample_ridge is not None
                              and self.small_sample_ridge < 0):
            raise ConfigError("ridge values must be nonnegative")
        if self.small_sample_ratio < 0:
            raise ConfigError("small_sample_ratio must be nonnegative")
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be at least 1")
        if self.svm_selection not in ("mvp", "second_order"):
            raise ConfigError("svm_selection must be 'mvp' or 'second_order'")

    @property
    def channel_groups(self):
        return COLOR_MODES[self.color_mode][1]

    @property
    def color_space(self):
        return COLOR_MODES[self.color_mode][0]

    def to_dict(self):
        d = asdict(self)
        for key in ("schemes", "blocks", "energy_threshold"):
            if isinstance(d[key], tuple):
                d[key] = list(d[key])
        return d

    def with_overrides(self, overrides):
        return from_mapping({**self.to_dict(), **overrides})


_PLUS = ("mean", "min", "max")
PRESETS = {
    "mnist_default": PipelineConfig(dataset="mnist", energy_threshold=0.97),
    "fashion_default": PipelineConfig(dataset="fashion", energy_threshold=0.97),
    "cifar10_default": PipelineConfig(dataset="cifar10", color_mode="l,ab", pad_to=32,
                                      energy_threshold=0.98),
    "mnist_plus": PipelineConfig(dataset="mnist", energy_threshold=0.97, schemes=_PLUS),
    "fashion_plus": PipelineConfig(dataset="fashion", energy_threshold=0.97, schemes=_PLUS),
    "cifar10_plus": PipelineConfig(dataset="cifar10", color_mode="l,ab", energy_threshold=0.98,
                                   schemes=_PLUS),
}

_FIELDS = {f.name for f in fields(PipelineConfig)}


def parse_value(text):
    """Parse an override value: JSON, a fraction such as ``1/4``, a comma list or a string."""
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        if "/" in text and "," not in text:
            return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        pass
    if text.lower() in ("none", "null"):
        return None
    if "," in text and text not in COLOR_MODES:
        return [parse_value(part) for part in text.split(",")]
    return text


def from_mapping(mapping):
    mapping = dict(mapping)
    preset = mapping.pop("preset", None)
    unknown = sorted(set(mapping) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset].to_dict() if preset else {}
    merged = {**base, **mapping}
    for key in ("schemes", "blocks"):
        if key in merged and not isinstance(merged[key], (list, tuple)):
            merged[key] = [merged[key]]
    try:
        return PipelineConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_overrides(items):
    """``["key=value", ...]`` -> dict, rejecting undeclared keys."""
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key: {key}")
        out[key] = parse_value(value)
    return out


def load_config(spec, overrides=None):
    """Resolve a preset name or a JSON / key=value file, then apply overrides."""
    if spec in PRESETS:
        mapping = {"preset": spec}
    else:
        path = Path(spec)
        if not path.exists():
            raise ConfigError(f"{spec!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
        text = path.read_text()
        try:
            mapping = json.loads(text)
        except json.JSONDecodeError:
            mapping = {}
            for line in text.splitlines():
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}: cannot parse line {line!r}")
                key, value = line.split("=", 1)
                mapping[key.strip()] = parse_value(value)
        if not isinstance(mapping, dict):
            raise ConfigError(f"{path}: configuration must be an object")
    config = from_mapping(mapping)
    if overrides:
        config = config.with_overrides(overrides)
    return config
