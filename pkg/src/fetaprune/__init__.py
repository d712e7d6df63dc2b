"""Layerwise pruning of dense ReLU networks.

Hard thresholding, FeTa (DC programming with accelerated proximal SVRG),
margin-based generalization bounds, and a reproducible CLI pipeline.
"""
__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .linalg import ParameterError, make_rng  # noqa: E402
from .net import DenseNet, LabeledSet, Layer, LayerTap, accuracy, capture, forward  # noqa: E402
from .pruner import FetaConfig, PruneResult, ThresholdSpec, feta, hard_threshold  # noqa: E402

__all__ = [
    "BACKEND",
    "DenseNet",
    "FetaConfig",
    "LabeledSet",
    "Layer",
    "LayerTap",
    "ParameterError",
    "PruneResult",
    "ThresholdSpec",
    "accuracy",
    "capture",
    "feta",
    "forward",
    "hard_threshold",
    "make_rng",
]
