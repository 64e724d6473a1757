"""Hyperspectral point-object detection toolkit: scene synthesis, classic
detectors, transformer forward kernels, label assignment and evaluation."""

from .errors import HyperspodError
from .hsicube import (
    Annotation,
    AnnotationSet,
    BBox,
    BinaryMask,
    Detection,
    HyperCube,
    ScoreMap,
    read_annotations,
    read_cube,
    read_detections,
    write_annotations,
    write_cube,
    write_detections,
)

__version__ = "0.1.0"

__all__ = [
    "HyperspodError",
    "Annotation",
    "AnnotationSet",
    "BBox",
    "BinaryMask",
    "Detection",
    "HyperCube",
    "ScoreMap",
    "read_annotations",
    "read_cube",
    "read_detections",
    "write_annotations",
    "write_cube",
    "write_detections",
]
