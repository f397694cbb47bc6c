"""Analog gauge reading: synthetic data, segmentation + angle networks, evaluation."""
from .angles import (
    AngleTriple,
    DegenerateGaugeError,
    GaugeError,
    GaugeRange,
    Point2,
    Reading,
    angle_to_reading,
    circular_abs_error,
    dequantize,
    keypoint_angle,
    quantize,
)

__version__ = "0.1.0"

__all__ = [
    "AngleTriple", "DegenerateGaugeError", "GaugeError", "GaugeRange", "Point2", "Reading",
    "angle_to_reading", "circular_abs_error", "dequantize", "keypoint_angle", "quantize",
]
