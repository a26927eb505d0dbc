"""RGB-D salient object detection on a small numpy autodiff core.

The network pairs a shared windowed-attention encoder with a point-aware
cross-modality interaction block, a transformer decoder with side outputs
and a convolutional refinement tail.
"""
from .config import Config, apply_ablation, faithful, toy
from .errors import (CheckpointError, ConfigError, DatasetError, DomainError, ShapeError, TapeError,
                     TrainingError)
from .model import PICRNet, Prediction, build_model
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "Config", "apply_ablation", "faithful", "toy",
    "PICRNet", "Prediction", "build_model", "Tensor", "no_grad",
    "CheckpointError", "ConfigError", "DatasetError", "DomainError", "ShapeError", "TapeError", "TrainingError",
]
