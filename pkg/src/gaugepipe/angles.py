"""Angular geometry for gauge landmarks.

Convention used throughout the package: angles are in degrees in ``[0, 360)``,
0 deg points along the rightward horizontal ray from the gauge center and
angles grow clockwise on screen (image coordinates, y pointing down). Gauge
scales sweep clockwise from the start marker to the end marker.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

NUM_BINS = 360


class GaugeError(ValueError):
    """Base class for invalid gauge geometry or labels."""


class DegenerateGeometryError(GaugeError):
    """A ray has zero length (point coincides with the center)."""


class DegenerateGaugeError(GaugeError):
    """Start and end markers coincide, so the scale has no sweep."""


class Point2(NamedTuple):
    x: float
    y: float


def wrap360(angle):
    """Fold ``angle`` into ``[0, 360)``. Works on scalars and arrays."""
    if np.ndim(angle) == 0:
        a = float(angle) % 360.0
        # float modulo can round up to exactly 360 for tiny negatives
        return 0.0 if a >= 360.0 else a
    a = np.mod(np.asarray(angle, dtype=float), 360.0)
    a[a >= 360.0] = 0.0
    return a


@dataclass(frozen=True)
class AngleTriple:
    """Start marker, end marker and needle tip angles in degrees."""

    start: float
    end: float
    needle: float

    def __post_init__(self):
        for name in ("start", "end", "needle"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise GaugeError(f"{name} angle is not finite: {value}")
            object.__setattr__(self, name, wrap360(value))

    @property
    def sweep(self) -> float:
        return clockwise_between(self.start, self.end)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.start, self.end, self.needle)

    def shifted(self, delta: float) -> "AngleTriple":
        return AngleTriple(self.start + delta, self.end + delta, self.needle + delta)


@dataclass(frozen=True)
class GaugeRange:
    min_value: float
    max_value: float
    unit: str = ""

    def __post_init__(self):
        if not self.max_value > self.min_value:
            raise GaugeError(
                f"gauge range needs max > min, got [{self.min_value}, {self.max_value}]"
            )

    @property
    def span(self) -> float:
        return self.max_value - self.min_value

    @classmethod
    def parse(cls, text: str) -> "GaugeRange":
        """Parse ``"min,max[,unit]"`` as used on the command line."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) not in (2, 3):
            raise GaugeError(f"expected 'min,max[,unit]', got {text!r}")
        unit = parts[2] if len(parts) == 3 else ""
        return cls(float(parts[0]), float(parts[1]), unit)


class Reading(NamedTuple):
    """Physical value read off a gauge.

    ``out_of_scale`` is set when the needle sits past the end marker; the value
    is then a linear extrapolation rather than a clamp.
    """

    value: float
    unit: str
    out_of_scale: bool


def angle_of(point, center) -> float:
    """Angle of the ray ``center -> point``, clockwise from the rightward horizontal."""
    dx = float(point[0]) - float(center[0])
    dy = float(point[1]) - float(center[1])
    if dx == 0.0 and dy == 0.0:
        raise DegenerateGeometryError(f"point {tuple(point)} coincides with center")
    return wrap360(math.degrees(math.atan2(dy, dx)))


def clockwise_between(a, b):
    """Clockwise angular distance from ``a`` to ``b``, in ``[0, 360)``."""
    if np.ndim(a) == 0 and np.ndim(b) == 0:
        return wrap360(float(b) - float(a))
    return wrap360(np.asarray(b, dtype=float) - np.asarray(a, dtype=float))


def keypoint_angle(center, start, tip) -> float:
    """Clockwise angle from the start marker to the needle tip, seen from ``center``.

    The interior angle between the two rays is always <= 180 deg. The sign of
    the 2D cross product ``(start - center) x (tip - center)`` tells whether
    the tip is reached clockwise (positive in y-down coordinates); otherwise
    the explement ``360 - theta`` is the clockwise span.
    """
    ax, ay = float(start[0]) - float(center[0]), float(start[1]) - float(center[1])
    bx, by = float(tip[0]) - float(center[0]), float(tip[1]) - float(center[1])
    if (ax == 0.0 and ay == 0.0) or (bx == 0.0 and by == 0.0):
        raise DegenerateGeometryError("start or tip coincides with center")
    cross = ax * by - ay * bx
    dot = ax * bx + ay * by
    theta = math.degrees(math.atan2(abs(cross), dot))
    if cross < 0.0:
        theta = 360.0 - theta
    return wrap360(theta)


def angle_to_reading(triple: AngleTriple, gauge_range: GaugeRange) -> Reading:
    """Map the needle angle linearly onto the gauge range.

    Raises:
        DegenerateGaugeError: if the start and end markers coincide.
    """
    sweep = clockwise_between(triple.start, triple.end)
    if sweep <= 0.0:
        raise DegenerateGaugeError("start and end markers coincide")
    travel = clockwise_between(triple.start, triple.needle)
    value = gauge_range.min_value + (travel / sweep) * gauge_range.span
    return Reading(value, gauge_range.unit, travel > sweep)


def quantize(angle):
    """Bin index of ``angle``; bin ``b`` covers ``[b, b + 1)`` degrees."""
    if np.ndim(angle) == 0:
        return int(math.floor(wrap360(angle))) % NUM_BINS
    return np.floor(wrap360(angle)).astype(np.int64) % NUM_BINS


def dequantize(index):
    """Center angle of bin ``index``."""
    idx = np.asarray(index)
    if not np.issubdtype(idx.dtype, np.integer):
        if not np.all(np.equal(np.mod(idx, 1), 0)):
            raise GaugeError(f"bin index must be integral, got {index!r}")
    if np.any(idx < 0) or np.any(idx >= NUM_BINS):
        raise GaugeError(f"bin index out of range [0, {NUM_BINS - 1}]: {index!r}")
    if idx.ndim == 0:
        return float(idx) + 0.5
    return idx.astype(float) + 0.5


def circular_abs_error(pred, truth):
    """Absolute angular error folded across the 0/360 seam, in ``[0, 180]``."""
    d = np.mod(np.abs(np.asarray(pred, dtype=float) - np.asarray(truth, dtype=float)), 360.0)
    err = np.minimum(d, 360.0 - d)
    if err.ndim == 0:
        return float(err)
    return err


def point_at(center, angle: float, distance: float) -> Point2:
    """Point at ``distance`` pixels from ``center`` along ``angle``."""
    rad = math.radians(angle)
    return Point2(float(center[0]) + distance * math.cos(rad),
                  float(center[1]) + distance * math.sin(rad))
