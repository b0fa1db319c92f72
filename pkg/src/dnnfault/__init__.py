"""Layer-level fault localisation for small feed-forward networks.

The package trains models with a from-scratch numpy engine, records
per-layer values for every batch and runs a statistical detector over them
to name the first layer and phase where training went wrong.
"""

from .detector import (DeepLocalize, DetectorConfig, EarlyStopping, TerminateOnNaN, Verdict, VerdictCode,
                       ana, check_batch)
from .engine import Model, TrainConfig, TrainOutcome, fit, predict
from .errors import DnnFaultError
from .layers import Activation, Conv2D, Dense, Dropout, Flatten, MaxPool2D
from .probes import BatchSnapshot, Location, SnapshotRecorder
from .tensor import Rng

__all__ = [
    "DeepLocalize", "DetectorConfig", "EarlyStopping", "TerminateOnNaN", "Verdict", "VerdictCode",
    "ana", "check_batch", "Model", "TrainConfig", "TrainOutcome", "fit", "predict", "DnnFaultError",
    "Activation", "Conv2D", "Dense", "Dropout", "Flatten", "MaxPool2D",
    "BatchSnapshot", "Location", "SnapshotRecorder", "Rng",
]
__version__ = "0.1.0"
