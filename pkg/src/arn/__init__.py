"""Auto Resonance Networks: growable resonator-node classifiers."""

from .graph import Layer, Node, Recognition, TuningPolicy, present, train_step
from .resonance import ResonatorSpec, Transform, coverage_bounds, resonate
from .vision import ClassificationOutcome, Network, NetworkConfig, Status, TilingSpec, TracePath

__version__ = "0.1.0"

__all__ = [
    "ClassificationOutcome",
    "Layer",
    "Network",
    "NetworkConfig",
    "Node",
    "Recognition",
    "ResonatorSpec",
    "Status",
    "TilingSpec",
    "TracePath",
    "Transform",
    "TuningPolicy",
    "coverage_bounds",
    "present",
    "resonate",
    "train_step",
]
