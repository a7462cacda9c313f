"""Pavement distress detection benchmark toolkit."""

from paveval.dataset import (
    Annotation,
    Dataset,
    Detection,
    DistressClass,
    ImageRecord,
    Source,
)
from paveval.errors import ParseError, PavevalError, UnknownClassError, ValidationError
from paveval.geometry import BBox

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "BBox",
    "Dataset",
    "Detection",
    "DistressClass",
    "ImageRecord",
    "ParseError",
    "PavevalError",
    "Source",
    "UnknownClassError",
    "ValidationError",
]
