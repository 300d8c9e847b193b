"""Multi-view semi-supervised label distribution learning.

Training alternates between per-view linear maps, a cross-view similarity
graph over complemented neighbor sets, and propagated label distributions.
"""

__version__ = "0.1.0"

from .dataset import MultiViewDataset, SyntheticSpec, generate_synthetic, load_dataset, mask_labels, save_dataset, split_folds
from .errors import (FeasibilityError, LoadError, MvldlError, ParameterError, QpProblemError, ShapeError,
                     TrainingError, ValidationError)
from .metrics import aggregate_folds, evaluate_pair, evaluate_set
from .model import Hyperparams, ModelParams, load_model, predict, save_model, train

__all__ = [
    "MultiViewDataset", "SyntheticSpec", "generate_synthetic", "load_dataset", "mask_labels", "save_dataset",
    "split_folds", "FeasibilityError", "LoadError", "MvldlError", "ParameterError", "QpProblemError",
    "ShapeError", "TrainingError", "ValidationError", "aggregate_folds", "evaluate_pair", "evaluate_set",
    "Hyperparams", "ModelParams", "load_model", "predict", "save_model", "train",
]
