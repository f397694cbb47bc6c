"""Independent reference computations used by the tests.

Nothing here calls atan2 or the package's angle helpers: directions are
matched by rotating a unit ray in fixed increments and comparing with dot
products.
"""
from fractions import Fraction

import cv2
import numpy as np

STEP = 0.01
_SWEEP = np.arange(0.0, 360.0, STEP)
_COS = np.cos(np.radians(_SWEEP))
_SIN = np.sin(np.radians(_SWEEP))


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def sweep_clockwise(ray_from, ray_to):
    """Clockwise rotation (y-down screen coords) taking ``ray_from`` onto ``ray_to``.

    Both arguments are (N, 2) arrays. The start ray is rotated in 0.01 deg
    steps; the step whose rotated ray best aligns with the target wins.
    """
    a = _unit(np.atleast_2d(ray_from))
    b = _unit(np.atleast_2d(ray_to))
    out = np.empty(len(a))
    for lo in range(0, len(a), 64):
        ax, ay = a[lo:lo + 64, 0:1], a[lo:lo + 64, 1:2]
        # rotation by +delta in y-down coordinates is clockwise on screen
        rx = ax * _COS - ay * _SIN
        ry = ax * _SIN + ay * _COS
        align = rx * b[lo:lo + 64, 0:1] + ry * b[lo:lo + 64, 1:2]
        out[lo:lo + 64] = _SWEEP[np.argmax(align, axis=1)]
    return out


def direction_angle(point, center):
    """Angle of ``center -> point`` by sweeping the rightward unit ray."""
    ray = np.asarray(point, dtype=float) - np.asarray(center, dtype=float)
    return float(sweep_clockwise(np.array([[1.0, 0.0]]), ray[None, :])[0])


def rotate_cw(point, center, delta_deg):
    """Rotate ``point`` clockwise on screen about ``center`` by ``delta_deg``."""
    c, s = np.cos(np.radians(delta_deg)), np.sin(np.radians(delta_deg))
    dx, dy = point[0] - center[0], point[1] - center[1]
    return (center[0] + dx * c - dy * s, center[1] + dx * s + dy * c)


def circ_diff(a, b):
    d = np.mod(np.abs(np.asarray(a) - np.asarray(b)), 360.0)
    return np.minimum(d, 360.0 - d)


def fine_direction_angle(point, center, iters=48):
    """``direction_angle`` refined by bisection on the cross-product sign.

    The coarse sweep brackets the answer to within one step; bisection on
    ``cross(ray(theta), v)`` (positive while the target is still clockwise of
    the ray) narrows the bracket to ~1e-12 deg.
    """
    v = np.asarray(point, dtype=float) - np.asarray(center, dtype=float)
    coarse = direction_angle(point, center)
    lo, hi = coarse - 2 * STEP, coarse + 2 * STEP
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        c, s = np.cos(np.radians(mid)), np.sin(np.radians(mid))
        if c * v[1] - s * v[0] > 0:
            lo = mid
        else:
            hi = mid
    return float(np.mod(0.5 * (lo + hi), 360.0))


def pinhole_project(face_pts, yaw, pitch, focal, center):
    """Rigid 3D rotation of the face plane then perspective division.

    A face point (u, v) becomes (u, v, 0), is rotated by pitch about x after
    yaw about y, pushed ``focal`` along the optical axis and projected.
    """
    pts = np.atleast_2d(np.asarray(face_pts, dtype=float))
    a, b = np.radians(yaw), np.radians(pitch)
    x0, y0 = pts[:, 0], pts[:, 1]
    # yaw: rotate about the y axis
    x1, y1, z1 = x0 * np.cos(a), y0, -x0 * np.sin(a)
    # pitch: rotate about the x axis
    x2, y2, z2 = x1, y1 * np.cos(b) - z1 * np.sin(b), y1 * np.sin(b) + z1 * np.cos(b)
    z = z2 + focal
    return np.column_stack([center[0] + focal * x2 / z, center[1] + focal * y2 / z])


def oracle_truth(spec):
    """Landmark angles from an independent 3D projection of the face points."""
    r = spec.face_radius
    pts = [(0.0, 0.0)]
    for ang, frac in ((spec.start_angle, 0.85), (spec.end_angle, 0.85), (spec.needle_angle, 0.97)):
        a = np.radians(ang)
        pts.append((frac * r * np.cos(a), frac * r * np.sin(a)))
    proj = pinhole_project(pts, spec.yaw, spec.pitch, spec.focal, spec.center)
    return [fine_direction_angle(p, proj[0]) for p in proj[1:]], proj[0]


_DILATE2 = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (5, 5))


def probe_hits_needle(sample, frac=0.9, needle_class=2) -> bool:
    """Is the pixel at ``frac`` of the radius along the truth needle ray in the 2 px-dilated needle mask."""
    t = sample.truth
    a = np.radians(t.needle)
    x = int(round(t.center_px.x + frac * t.radius_px * np.cos(a)))
    y = int(round(t.center_px.y + frac * t.radius_px * np.sin(a)))
    needle = cv2.dilate((sample.mask == needle_class).astype(np.uint8), _DILATE2)
    return bool(needle[y, x])


def tolerance_oracle(err, lo, hi, tick):
    """Field tolerance rule in exact rational arithmetic."""
    err, span, tick = Fraction(err), Fraction(hi) - Fraction(lo), Fraction(tick)
    pct, ticks = span * Fraction(2, 100), 2 * tick
    return abs(err) <= (ticks if ticks > pct else pct)


TOLERANCE_GRID = [
    # (min, max, tick, error, passes)
    (0, 10, 0.2, 0.39, True),     # two-tick clause (0.4) dominates 2% (0.2)
    (0, 10, 0.2, 0.4, True),      # boundary, inclusive
    (0, 10, 0.2, 0.41, False),
    (0, 10, 0.2, 0.25, True),     # fails 2% alone, saved by the tick clause
    (0, 100, 0.5, 1.5, True),     # 2% clause (2.0) dominates two ticks (1.0)
    (0, 100, 0.5, 2.0, True),
    (0, 100, 0.5, 2.01, False),
    (0, 100, 0.5, -1.99, True),   # sign of the error is irrelevant
    (0, 10, 0.1, 0.2, True),      # both clauses equal
    (0, 10, 0.1, 0.21, False),
    (-1, 15, 0.5, 1.0, True),
    (-1, 15, 0.5, 1.01, False),
]
