"""wattsplit: energy disaggregation with automated model selection.

Splits a household's aggregate power signal into per-appliance estimates
using any of 11 pluggable algorithms, and tunes model choice plus
hyperparameters with a sequential Parzen-density optimizer.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .errors import ConfigError, DataError, TrainingDiverged
from .families import ALL_FAMILIES, build_model
from .metrics import MetricReport, classification_accuracy, evaluate_predictions, mae
from .timeseries import (AlignedDataset, PowerSeries, SplitSpec, align, load_csv,
                         make_windows, resample, split_by_date, standardize)

__version__ = "0.1.0"

__all__ = [
    "ALL_FAMILIES", "AlignedDataset", "ConfigError", "DataError", "KERNEL_BACKEND",
    "MetricReport", "PowerSeries", "SplitSpec", "TrainingDiverged", "align",
    "build_model", "classification_accuracy", "evaluate_predictions", "load_csv",
    "mae", "make_windows", "resample", "split_by_date", "standardize", "__version__",
]
