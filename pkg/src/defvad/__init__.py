"""Definition-conditioned video anomaly detection on feature sequences."""

from .core import (
    AnomalyDefinition,
    ClassEntry,
    Config,
    DefVadError,
    FeatureSequence,
    ScoreResult,
    ValidationError,
    VideoRecord,
    definition_from_classes,
    make_rng,
    validate_config,
)

__all__ = [
    "AnomalyDefinition",
    "ClassEntry",
    "Config",
    "DefVadError",
    "FeatureSequence",
    "ScoreResult",
    "ValidationError",
    "VideoRecord",
    "definition_from_classes",
    "make_rng",
    "validate_config",
]

__version__ = "0.1.0"
