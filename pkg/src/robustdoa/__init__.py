"""Robust and sparse M-estimation of directions of arrival."""
from .datagen import SCENARIOS, NoiseKind, NoiseModel, Scenario, SnapshotMatrix, generate
from .estimator import EstimateResult, EstimatorConfig, estimate_doas
from .geometry import ArrayGeometry, Dictionary, build_dictionary
from .loss import LossKind, LossSpec

__all__ = [
    "SCENARIOS", "NoiseKind", "NoiseModel", "Scenario", "SnapshotMatrix", "generate",
    "EstimateResult", "EstimatorConfig", "estimate_doas",
    "ArrayGeometry", "Dictionary", "build_dictionary", "LossKind", "LossSpec",
]
__version__ = "0.1.0"
