"""PixelHop: successive subspace learning for image classification."""

__version__ = "0.1.0"

from .aggregate import SCHEMES, aggregate
from .cascade import PixelHop, PixelHopUnit
from .classifier import SVC, Standardizer
from .config import PRESETS, PipelineConfig, load_config
from .datasets import LabeledDataset, load_dataset
from .exceptions import (ArgumentError, ConsistencyError, DataIOError, FormatError,
                         InsufficientDataError, NumericError, PixelHopError)
from .lag import LAG
from .modelfile import load_model, save_model
from .pipeline import PixelHopClassifier, TrainedPipeline, evaluate, infer, train
from .saab import Saab

__all__ = [
    "SCHEMES", "aggregate", "PixelHop", "PixelHopUnit", "SVC", "Standardizer", "PRESETS",
    "PipelineConfig", "load_config", "LabeledDataset", "load_dataset", "ArgumentError",
    "ConsistencyError", "DataIOError", "FormatError", "InsufficientDataError", "NumericError",
    "PixelHopError", "LAG", "load_model", "save_model", "PixelHopClassifier", "TrainedPipeline",
    "evaluate", "infer", "train", "Saab",
]
