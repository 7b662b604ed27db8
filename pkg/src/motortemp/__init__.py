"""Induction-motor temperature estimation: linear, MLP and dilated-CNN regressors."""

__version__ = "0.1.0"

from .data_model import Dataset, Profile, Sample, Split, load_dataset, split_leave_one_out, write_dataset
from .errors import ConfigError, DataError, DivergenceError, NumericError
from .preprocess import PreprocessConfig
from .training import Checkpoint, TrainConfig, evaluate, predict, run_loo_folds, train

__all__ = [
    "Checkpoint",
    "ConfigError",
    "DataError",
    "Dataset",
    "DivergenceError",
    "NumericError",
    "PreprocessConfig",
    "Profile",
    "Sample",
    "Split",
    "TrainConfig",
    "evaluate",
    "load_dataset",
    "predict",
    "run_loo_folds",
    "split_leave_one_out",
    "train",
    "write_dataset",
]
