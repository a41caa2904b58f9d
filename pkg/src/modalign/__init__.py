"""Multimodal joint-feature-space contrastive pre-training and evaluation.

A numpy-backed framework that aligns text, video, pose, and wearable-sensor
windows in one 1280-d space with pairwise symmetric contrastive losses, plus
fine-tuning protocols, zero-shot evaluation, and three self-supervised
baselines (instance-discrimination, transformation multi-task, autoencoder).
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ContractError, DataError, FormatError,
                     IngestionError, ModAlignError, ParameterError, ShapeError,
                     TrainingError)
from .tensor import Tensor

__all__ = [
    "__version__", "Tensor",
    "ModAlignError", "ShapeError", "ParameterError", "ContractError",
    "TrainingError", "DataError", "ConfigError", "FormatError", "IngestionError",
]
