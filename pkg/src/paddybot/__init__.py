"""Rice disease chat assistant: detection gateway, evaluation, dataset tools."""

__version__ = "0.1.0"

from .domain import (
    BoundingBox,
    ClassRegistry,
    Detection,
    DiseaseClass,
    GroundTruthBox,
    ImageRef,
    default_registry,
)

__all__ = [
    "BoundingBox",
    "ClassRegistry",
    "Detection",
    "DiseaseClass",
    "GroundTruthBox",
    "ImageRef",
    "default_registry",
    "__version__",
]
