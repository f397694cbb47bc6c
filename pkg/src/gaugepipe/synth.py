"""Procedural synthetic gauge renderer.

A planar gauge face is described in face coordinates (pixels, origin at the
gauge center), tilted by yaw/pitch through a pinhole homography and
rasterized with OpenCV. The segmentation mask is rasterized from the same
projected polygons as the image, before any photometric effect, and the
ground-truth angles are measured on projected landmark points.

Everything is a pure function of :class:`GaugeSpec`; the same seed gives the
same spec and the same pixels.
"""
from __future__ import annotations

import json
import math
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterator, Sequence

import cv2
import numpy as np

from .angles import AngleTriple, GaugeRange, Point2, angle_of, clockwise_between

BACKGROUND, CASE, NEEDLE = 0, 1, 2
CLASS_NAMES = ("background", "case", "needle")

NEEDLE_STYLES = ("tapered", "straight", "arrow")
CASE_STYLES = ("thin-ring", "thick-ring", "square-bezel")

# fraction of the face radius reached by the needle tip / probed by landmarks
NEEDLE_TIP = 0.97
MARKER_PROBE = 0.85

_SHIFT = 4  # fixed-point bits for sub-pixel cv2 polygon filling
_SCALE = 1 << _SHIFT

RGB = tuple[int, int, int]


class RenderError(ValueError):
    """The spec cannot be rendered (e.g. the warped gauge leaves the canvas)."""


@dataclass(frozen=True)
class LightSpec:
    direction: tuple[float, float] = (0.0, 1.0)
    shadow_enabled: bool = False
    shadow_offset: float = 0.0
    shadow_opacity: float = 0.0
    glare_enabled: bool = False
    glare_streaks: int = 0
    brightness_scale: float = 1.0

    def __post_init__(self):
        dx, dy = self.direction
        norm = math.hypot(dx, dy)
        if norm == 0:
            raise ValueError("light direction must be non-zero")
        object.__setattr__(self, "direction", (dx / norm, dy / norm))
        if not 0.0 <= self.shadow_opacity <= 1.0:
            raise ValueError(f"shadow_opacity out of [0, 1]: {self.shadow_opacity}")
        if not 0.3 <= self.brightness_scale <= 1.7:
            raise ValueError(f"brightness_scale out of [0.3, 1.7]: {self.brightness_scale}")
        if self.shadow_offset < 0 or self.glare_streaks < 0:
            raise ValueError("shadow_offset and glare_streaks must be non-negative")


@dataclass(frozen=True)
class NoiseSpec:
    dust_density: float = 0.0  # speckles per 1e4 px^2 of face area
    dust_seed: int = 0
    tint: tuple[int, int, int, float] = (0, 0, 0, 0.0)  # RGB + alpha in [0, 1]
    blur_sigma: float = 0.0
    sensor_noise_std: float = 0.0

    def __post_init__(self):
        if min(self.dust_density, self.blur_sigma, self.sensor_noise_std) < 0:
            raise ValueError("noise parameters must be non-negative")
        if not 0.0 <= self.tint[3] <= 1.0:
            raise ValueError(f"tint alpha out of [0, 1]: {self.tint[3]}")


@dataclass(frozen=True)
class GaugeSpec:
    seed: int
    canvas: tuple[int, int]  # (H, W)
    face_radius: float
    center: Point2
    start_angle: float
    end_angle: float
    needle_angle: float
    range: GaugeRange
    tick_count: int
    needle_style: str
    case_style: str
    face_color: RGB
    case_color: RGB
    needle_color: RGB
    tick_color: RGB
    background: tuple[RGB, RGB]
    yaw: float
    pitch: float
    focal: float
    light: LightSpec = field(default_factory=LightSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    scale_arc: bool = False
    clutter: int = 0

    def __post_init__(self):
        if self.tick_count < 2:
            raise ValueError("tick_count must be >= 2")
        if self.needle_style not in NEEDLE_STYLES:
            raise ValueError(f"unknown needle_style {self.needle_style!r}")
        if self.case_style not in CASE_STYLES:
            raise ValueError(f"unknown case_style {self.case_style!r}")
        if not -45 <= self.yaw <= 45 or not -30 <= self.pitch <= 30:
            raise ValueError(f"yaw/pitch out of range: {self.yaw}, {self.pitch}")
        if clockwise_between(self.start_angle, self.end_angle) <= 0:
            raise ValueError("start and end angles coincide")
        travel = clockwise_between(self.start_angle, self.needle_angle)
        if travel > clockwise_between(self.start_angle, self.end_angle) + 1e-9:
            raise ValueError("needle_angle lies outside the start->end sweep")

    @property
    def sweep(self) -> float:
        return clockwise_between(self.start_angle, self.end_angle)

    def without_photometrics(self) -> "GaugeSpec":
        """Same geometry with lighting and noise switched off."""
        return replace(self, light=LightSpec(), noise=NoiseSpec())


@dataclass(frozen=True)
class GroundTruth:
    start: float
    end: float
    needle: float
    range: GaugeRange
    center_px: Point2
    radius_px: float

    @property
    def angles(self) -> AngleTriple:
        return AngleTriple(self.start, self.end, self.needle)


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 uint8, RGB
    mask: np.ndarray  # H x W uint8, values in {0, 1, 2}
    truth: GroundTruth
    spec: GaugeSpec | None = None


@dataclass(frozen=True)
class SynthRanges:
    """Randomization ranges used by :func:`random_spec`.

    Radii and offsets are fractions of the shorter canvas side.
    """

    radius: tuple[float, float] = (0.26, 0.36)
    center_jitter: float = 0.05
    start_angle: tuple[float, float] = (95.0, 175.0)
    sweep: tuple[float, float] = (180.0, 320.0)
    tick_count: tuple[int, int] = (5, 13)
    yaw: tuple[float, float] = (-25.0, 25.0)
    pitch: tuple[float, float] = (-20.0, 20.0)
    focal: tuple[float, float] = (1.5, 3.0)
    brightness: tuple[float, float] = (0.6, 1.4)
    shadow_prob: float = 0.5
    shadow_offset: tuple[float, float] = (0.02, 0.06)  # fraction of face radius
    shadow_opacity: tuple[float, float] = (0.2, 0.6)
    glare_prob: float = 0.4
    glare_streaks: tuple[int, int] = (1, 3)
    dust_prob: float = 0.5
    dust_density: tuple[float, float] = (2.0, 25.0)
    tint_alpha: tuple[float, float] = (0.0, 0.25)
    blur_sigma: tuple[float, float] = (0.0, 1.0)
    sensor_noise: tuple[float, float] = (0.0, 6.0)
    dark_face_prob: float = 0.15
    clutter: tuple[int, int] = (0, 6)

    @classmethod
    def field_conditions(cls) -> "SynthRanges":
        """Harsher photometrics than the training ranges: dim, hazy, blurred, noisy.

        Used as a stand-in for the synthetic-to-real domain gap when measuring
        the effect of training-time augmentation.
        """
        return cls(brightness=(0.35, 0.55), tint_alpha=(0.25, 0.45),
                   blur_sigma=(1.4, 2.2), sensor_noise=(6.0, 10.0),
                   dust_prob=0.8, dust_density=(10.0, 30.0))


def _u(rng, lo_hi):
    return float(rng.uniform(lo_hi[0], lo_hi[1]))


def _color(rng, lo, hi) -> RGB:
    return tuple(int(c) for c in rng.integers(lo, hi + 1, size=3))


def random_spec(seed: int, canvas: tuple[int, int] = (128, 128),
                ranges: SynthRanges | None = None) -> GaugeSpec:
    """Draw a gauge scene from ``ranges``; fully determined by ``seed``."""
    h, w = int(canvas[0]), int(canvas[1])
    if h < 128 or w < 128:
        raise ValueError(f"canvas must be at least 128x128, got {h}x{w}")
    ranges = ranges or SynthRanges()
    rng = np.random.default_rng(seed)
    side = min(h, w)

    radius = _u(rng, ranges.radius) * side
    jitter = ranges.center_jitter * side
    center = Point2(w / 2 + rng.uniform(-jitter, jitter), h / 2 + rng.uniform(-jitter, jitter))
    start = _u(rng, ranges.start_angle)
    sweep = _u(rng, ranges.sweep)
    end = (start + sweep) % 360.0
    needle = (start + rng.uniform(0.0, 1.0) * sweep) % 360.0
    lo = float(rng.choice([0, 0, 0, -1, 0.5, 1]))
    hi = lo + float(rng.choice([1, 2.5, 4, 6, 10, 16, 25, 100, 160, 250, 600]))
    units = ("bar", "psi", "kPa", "MPa", "degC", "")
    gauge_range = GaugeRange(lo, hi, str(rng.choice(units)))

    if rng.uniform() < ranges.dark_face_prob:
        face = _color(rng, 10, 50)
        tick = _color(rng, 215, 255)
        needle_color = tuple(int(v) for v in rng.choice([[240, 240, 240], [230, 40, 30], [250, 200, 30]]))
    else:
        face = _color(rng, 200, 255)
        tick = _color(rng, 0, 45)
        needle_color = tuple(int(v) for v in rng.choice([[15, 15, 15], [200, 20, 20], [30, 30, 90]]))
    case_color = _color(rng, 60, 220)
    background = (_color(rng, 0, 255), _color(rng, 0, 255))

    theta = rng.uniform(0, 2 * math.pi)
    light = LightSpec(
        direction=(math.cos(theta), math.sin(theta)),
        shadow_enabled=bool(rng.uniform() < ranges.shadow_prob),
        shadow_offset=_u(rng, ranges.shadow_offset) * radius,
        shadow_opacity=_u(rng, ranges.shadow_opacity),
        glare_enabled=bool(rng.uniform() < ranges.glare_prob),
        glare_streaks=int(rng.integers(ranges.glare_streaks[0], ranges.glare_streaks[1] + 1)),
        brightness_scale=_u(rng, ranges.brightness),
    )
    noise = NoiseSpec(
        dust_density=_u(rng, ranges.dust_density) if rng.uniform() < ranges.dust_prob else 0.0,
        dust_seed=int(rng.integers(0, 2**31 - 1)),
        tint=(*_color(rng, 0, 255), _u(rng, ranges.tint_alpha)),
        blur_sigma=_u(rng, ranges.blur_sigma),
        sensor_noise_std=_u(rng, ranges.sensor_noise),
    )
    spec = GaugeSpec(
        seed=int(seed), canvas=(h, w), face_radius=radius, center=center,
        start_angle=start, end_angle=end, needle_angle=needle, range=gauge_range,
        tick_count=int(rng.integers(ranges.tick_count[0], ranges.tick_count[1] + 1)),
        needle_style=str(rng.choice(NEEDLE_STYLES)), case_style=str(rng.choice(CASE_STYLES)),
        face_color=face, case_color=case_color, needle_color=needle_color, tick_color=tick,
        background=background, yaw=_u(rng, ranges.yaw), pitch=_u(rng, ranges.pitch),
        focal=_u(rng, ranges.focal) * side, light=light, noise=noise,
        scale_arc=bool(rng.uniform() < 0.5),
        clutter=int(rng.integers(ranges.clutter[0], ranges.clutter[1] + 1)),
    )
    # shrink until the warped case fits; deterministic, so the seed still fixes the spec
    while not _fits(spec):
        spec = replace(spec, face_radius=spec.face_radius * 0.95)
    return spec


# --------------------------------------------------------------------------
# geometry


def homography(spec: GaugeSpec) -> np.ndarray:
    """3x3 map from face coordinates (origin at the gauge center) to image pixels.

    The face plane is rotated by ``Rx(pitch) @ Ry(yaw)`` and viewed by a pinhole
    camera of focal length ``spec.focal`` placed ``focal`` pixels away, so a
    zero tilt is a pure translation onto ``spec.center``.
    """
    cy_, sy_ = math.cos(math.radians(spec.yaw)), math.sin(math.radians(spec.yaw))
    cp, sp = math.cos(math.radians(spec.pitch)), math.sin(math.radians(spec.pitch))
    ry = np.array([[cy_, 0, sy_], [0, 1, 0], [-sy_, 0, cy_]])
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    rot = rx @ ry
    f = spec.focal
    k = np.array([[f, 0, spec.center.x], [0, f, spec.center.y], [0, 0, 1.0]])
    ext = np.column_stack([rot[:, 0], rot[:, 1], [0.0, 0.0, f]])
    hom = k @ ext
    return hom / hom[2, 2]


def project(hom: np.ndarray, pts) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ph = np.column_stack([pts, np.ones(len(pts))]) @ hom.T
    return ph[:, :2] / ph[:, 2:3]


def _polar(angle_deg, radius) -> np.ndarray:
    a = np.radians(angle_deg)
    return np.column_stack([radius * np.cos(a), radius * np.sin(a)])


def _circle(radius: float, n: int = 160) -> np.ndarray:
    return _polar(np.linspace(0, 360, n, endpoint=False), np.full(n, radius))


def _rounded_square(half: float, corner: float, n: int = 12) -> np.ndarray:
    pts = []
    inner = half - corner
    for k, (sx, sy) in enumerate([(1, 1), (-1, 1), (-1, -1), (1, -1)]):
        a0 = 90.0 * k
        arc = np.radians(np.linspace(a0, a0 + 90, n))
        pts.append(np.column_stack([sx * inner + corner * np.cos(arc),
                                    sy * inner + corner * np.sin(arc)]))
    return np.vstack(pts)


def _bar(angle: float, r0: float, r1: float, w0: float, w1: float | None = None) -> np.ndarray:
    """Quad along the ray at ``angle`` from radius r0 (width w0) to r1 (width w1)."""
    w1 = w0 if w1 is None else w1
    d = np.array([math.cos(math.radians(angle)), math.sin(math.radians(angle))])
    n = np.array([-d[1], d[0]])
    return np.array([d * r0 + n * w0 / 2, d * r1 + n * w1 / 2,
                     d * r1 - n * w1 / 2, d * r0 - n * w0 / 2])


def _arc_band(a0: float, sweep: float, r_in: float, r_out: float) -> np.ndarray:
    n = max(8, int(sweep / 3))
    angs = a0 + np.linspace(0, sweep, n)
    return np.vstack([_polar(angs, np.full(n, r_out)), _polar(angs[::-1], np.full(n, r_in))])


def _case_outline(spec: GaugeSpec) -> np.ndarray:
    r = spec.face_radius
    if spec.case_style == "thin-ring":
        return _circle(1.07 * r)
    if spec.case_style == "thick-ring":
        return _circle(1.18 * r)
    return _rounded_square(1.16 * r, 0.3 * r)


def _needle_polys(spec: GaugeSpec) -> list[np.ndarray]:
    r, a = spec.face_radius, spec.needle_angle
    tip = NEEDLE_TIP * r
    if spec.needle_style == "straight":
        polys = [_bar(a, -0.15 * r, tip, 0.05 * r)]
    elif spec.needle_style == "tapered":
        polys = [_bar(a, -0.18 * r, 0.0, 0.05 * r, 0.08 * r), _bar(a, 0.0, tip, 0.08 * r, 0.012 * r)]
    else:
        head = 0.8 * r
        polys = [_bar(a, -0.12 * r, head, 0.035 * r),
                 _bar(a, head - 1e-3 * r, tip, 0.12 * r, 1e-3 * r)]
    polys.append(_circle(0.075 * r, 32))
    return polys


@dataclass
class Geometry:
    """Projected polygons (image pixels) of every drawable part of a gauge."""

    hom: np.ndarray
    case: np.ndarray
    rim: np.ndarray
    face: np.ndarray
    ticks: list[np.ndarray]
    markers: list[np.ndarray]
    arc: np.ndarray | None
    needle: list[np.ndarray]
    truth: GroundTruth


def gauge_geometry(spec: GaugeSpec) -> Geometry:
    r = spec.face_radius
    hom = homography(spec)
    warp = lambda p: project(hom, p)  # noqa: E731

    sweep = spec.sweep
    major = [spec.start_angle + sweep * k / (spec.tick_count - 1) for k in range(spec.tick_count)]
    minor_per = 4 if sweep / (spec.tick_count - 1) >= 16 else 1
    ticks = []
    for k in range(spec.tick_count - 1):
        for j in range(1, minor_per):
            ang = major[k] + (major[k + 1] - major[k]) * j / minor_per
            ticks.append(warp(_bar(ang, 0.84 * r, 0.93 * r, 0.014 * r)))
    for ang in major[1:-1]:
        ticks.append(warp(_bar(ang, 0.76 * r, 0.93 * r, 0.03 * r)))
    markers = [warp(_bar(ang, 0.68 * r, 0.95 * r, 0.045 * r)) for ang in (major[0], major[-1])]
    arc = warp(_arc_band(spec.start_angle, sweep, 0.93 * r, 0.955 * r)) if spec.scale_arc else None

    c = warp([[0.0, 0.0]])[0]
    center_px = Point2(float(c[0]), float(c[1]))
    landmarks = warp(np.vstack([_polar([spec.start_angle, spec.end_angle], [MARKER_PROBE * r] * 2),
                                _polar([spec.needle_angle], [NEEDLE_TIP * r])]))
    rim = warp(_circle(r, 360))
    radius_px = float(np.min(np.linalg.norm(rim - c, axis=1)))
    truth = GroundTruth(
        start=angle_of(landmarks[0], center_px), end=angle_of(landmarks[1], center_px),
        needle=angle_of(landmarks[2], center_px), range=spec.range,
        center_px=center_px, radius_px=radius_px)
    return Geometry(
        hom=hom, case=warp(_case_outline(spec)), rim=warp(_circle(1.025 * r)), face=rim,
        ticks=ticks, markers=markers, arc=arc,
        needle=[warp(p) for p in _needle_polys(spec)], truth=truth)


def _fits(spec: GaugeSpec, margin: float = 1.0) -> bool:
    h, w = spec.canvas
    outline = project(homography(spec), _case_outline(spec))
    if not np.all(np.isfinite(outline)):
        return False
    return (outline[:, 0].min() >= margin and outline[:, 1].min() >= margin
            and outline[:, 0].max() <= w - 1 - margin and outline[:, 1].max() <= h - 1 - margin)


# --------------------------------------------------------------------------
# rasterization


def _fixed(polys) -> list[np.ndarray]:
    return [np.round(np.asarray(p) * _SCALE).astype(np.int32).reshape(-1, 1, 2) for p in polys]


def fill_mask(shape: tuple[int, int], polys, value: int = 1, out: np.ndarray | None = None) -> np.ndarray:
    """Hard (aliased) polygon fill; used for label masks."""
    out = np.zeros(shape, np.uint8) if out is None else out
    # one call per polygon: a single fillPoly call uses even-odd filling on overlaps
    for poly in _fixed(polys):
        cv2.fillPoly(out, [poly], int(value), lineType=cv2.LINE_8, shift=_SHIFT)
    return out


def coverage(shape: tuple[int, int], polys) -> np.ndarray:
    """Anti-aliased polygon coverage in [0, 1]."""
    buf = np.zeros(shape, np.uint8)
    for poly in _fixed(polys):
        cv2.fillPoly(buf, [poly], 255, lineType=cv2.LINE_AA, shift=_SHIFT)
    return buf.astype(np.float32) / 255.0


def _blend(img: np.ndarray, alpha: np.ndarray, color) -> None:
    a = alpha[..., None]
    img *= 1.0 - a
    img += a * np.asarray(color, np.float32)


def render_mask(geom: Geometry, shape: tuple[int, int]) -> np.ndarray:
    mask = fill_mask(shape, [geom.case], CASE)
    fill_mask(shape, geom.needle, NEEDLE, out=mask)
    return mask


def _background(spec: GaugeSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.canvas
    c0, c1 = (np.asarray(c, np.float32) for c in spec.background)
    t = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :, None]
    img = np.broadcast_to(c0 * (1 - t) + c1 * t, (h, w, 3)).copy()
    for _ in range(spec.clutter):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        bw, bh = rng.uniform(0.05, 0.4) * w, rng.uniform(0.02, 0.3) * h
        ang = rng.uniform(0, 180)
        rect = cv2.boxPoints(((x0, y0), (bw, bh), ang))
        _blend(img, coverage((h, w), [rect]), rng.integers(0, 256, 3))
    return img


def render(spec: GaugeSpec) -> Sample:
    """Rasterize ``spec`` into an RGB image, a class mask and exact labels."""
    h, w = spec.canvas
    if not _fits(spec, margin=0.0):
        raise RenderError("warped gauge leaves the canvas")
    geom = gauge_geometry(spec)
    mask = render_mask(geom, (h, w))

    rng = np.random.default_rng([spec.seed, 7])
    img = _background(spec, rng)
    r = spec.face_radius
    shade = np.asarray(spec.case_color, np.float32) * 0.55
    _blend(img, coverage((h, w), [geom.case]), spec.case_color)
    _blend(img, coverage((h, w), [geom.rim]), shade)
    face_cov = coverage((h, w), [geom.face])
    _blend(img, face_cov, spec.face_color)
    if geom.arc is not None:
        _blend(img, coverage((h, w), [geom.arc]), spec.tick_color)
    _blend(img, coverage((h, w), geom.ticks + geom.markers), spec.tick_color)

    light = spec.light
    if light.shadow_enabled and light.shadow_opacity > 0:
        off = np.asarray(light.direction) * light.shadow_offset
        shadow = coverage((h, w), [p + off for p in geom.needle]) * face_cov
        _blend(img, shadow * light.shadow_opacity, (0, 0, 0))
    _blend(img, coverage((h, w), geom.needle), spec.needle_color)

    if light.glare_enabled:
        for _ in range(light.glare_streaks):
            ang = rng.uniform(0, 180)
            offset = rng.uniform(-0.6, 0.6) * r
            width = rng.uniform(0.06, 0.25) * r
            d = np.array([math.cos(math.radians(ang)), math.sin(math.radians(ang))])
            n = np.array([-d[1], d[0]])
            streak = np.array([-d * 1.2 * r + n * (offset - width / 2), d * 1.2 * r + n * (offset - width / 2),
                               d * 1.2 * r + n * (offset + width / 2), -d * 1.2 * r + n * (offset + width / 2)])
            glare = coverage((h, w), [project(geom.hom, streak)]) * face_cov
            _blend(img, glare * rng.uniform(0.25, 0.55), (255, 255, 255))

    noise = spec.noise
    if noise.dust_density > 0:
        drng = np.random.default_rng(noise.dust_seed)
        count = int(round(noise.dust_density * math.pi * r * r / 1e4))
        rad = r * np.sqrt(drng.uniform(0, 1, count))
        ang = drng.uniform(0, 360, count)
        centers = project(geom.hom, _polar(ang, rad))
        dust = np.zeros((h, w), np.float32)
        for (x, y), size in zip(centers, drng.uniform(0.4, 1.4, count)):
            buf = np.zeros((h, w), np.uint8)
            cv2.circle(buf, (int(round(x * _SCALE)), int(round(y * _SCALE))),
                       max(1, int(round(size * _SCALE))), 255, -1, cv2.LINE_AA, _SHIFT)
            np.maximum(dust, buf.astype(np.float32) / 255.0, out=dust)
        _blend(img, dust * 0.8, (110, 95, 70))
    if noise.tint[3] > 0:
        _blend(img, face_cov * noise.tint[3], noise.tint[:3])

    # directional illumination falloff across the canvas
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float32)
    dx, dy = light.direction
    grad = ((xs - w / 2) * dx + (ys - h / 2) * dy) / max(h, w)
    img *= (light.brightness_scale * (1.0 - 0.3 * grad))[..., None]
    if noise.blur_sigma > 0.05:
        img = cv2.GaussianBlur(img, (0, 0), noise.blur_sigma)
    if noise.sensor_noise_std > 0:
        img += np.random.default_rng([spec.seed, 11]).normal(0, noise.sensor_noise_std, img.shape).astype(np.float32)
    image = np.clip(np.round(img), 0, 255).astype(np.uint8)
    return Sample(image=image, mask=mask, truth=geom.truth, spec=spec)


# --------------------------------------------------------------------------
# datasets

MANIFEST = "manifest.jsonl"
_ANGLE_KEYS = ("start_deg", "end_deg", "needle_deg")


@dataclass
class ManifestRecord:
    id: str
    start_deg: float
    end_deg: float
    needle_deg: float
    min_value: float
    max_value: float
    unit: str
    center_x: float
    center_y: float
    radius_px: float
    split: str

    @classmethod
    def from_truth(cls, sample_id: str, truth: GroundTruth, split: str) -> "ManifestRecord":
        return cls(sample_id, truth.start, truth.end, truth.needle, truth.range.min_value,
                   truth.range.max_value, truth.range.unit, truth.center_px.x,
                   truth.center_px.y, truth.radius_px, split)

    @property
    def angles(self) -> AngleTriple:
        return AngleTriple(self.start_deg, self.end_deg, self.needle_deg)

    @property
    def gauge_range(self) -> GaugeRange:
        return GaugeRange(self.min_value, self.max_value, self.unit)

    def to_json(self) -> str:
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float):
                # fixed notation keeps >= 6 fractional digits in the file
                parts.append(f'"{f.name}": {v:.6f}')
            else:
                parts.append(f'"{f.name}": {json.dumps(v)}')
        return "{" + ", ".join(parts) + "}"


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord]

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def image_path(self, rec: ManifestRecord) -> Path:
        return self.root / "images" / f"{rec.id}.png"

    def mask_path(self, rec: ManifestRecord) -> Path:
        return self.root / "masks" / f"{rec.id}.png"

    def load(self, rec: ManifestRecord) -> tuple[np.ndarray, np.ndarray]:
        """Return the (RGB image, mask) pair of one record."""
        bgr = cv2.imread(str(self.image_path(rec)), cv2.IMREAD_COLOR)
        mask = cv2.imread(str(self.mask_path(rec)), cv2.IMREAD_UNCHANGED)
        if bgr is None or mask is None:
            raise FileNotFoundError(f"missing image or mask for sample {rec.id}")
        return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB), mask


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(ManifestRecord(**json.loads(line)))
    return DatasetManifest(root, records)


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _render_one(args):
    index, seed, canvas, ranges = args
    return render(random_spec(sample_seed(seed, index), canvas, ranges))


def iter_samples(n: int, seed: int, canvas=(128, 128), ranges: SynthRanges | None = None,
                 workers: int = 1) -> Iterator[Sample]:
    """Render ``n`` samples in index order, optionally across worker processes."""
    jobs = [(i, seed, tuple(canvas), ranges) for i in range(n)]
    if workers <= 1:
        yield from map(_render_one, jobs)
    else:
        with ProcessPoolExecutor(workers) as pool:
            yield from pool.map(_render_one, jobs, chunksize=8)


def generate_dataset(n: int, seed: int, canvas: Sequence[int], out_dir, *,
                     val_fraction: float = 0.0, ranges: SynthRanges | None = None,
                     overwrite: bool = False, workers: int = 1) -> DatasetManifest:
    """Render ``n`` samples into ``out_dir`` (images/, masks/, manifest.jsonl).

    The last ``round(n * val_fraction)`` samples are flagged ``split="val"``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = Path(out_dir)
    existing = [out / "images", out / "masks", out / MANIFEST]
    if any(p.exists() for p in existing):
        if not overwrite:
            raise FileExistsError(f"{out} already holds a dataset; pass overwrite=True")
        for p in existing:
            if p.is_dir():
                shutil.rmtree(p)
            elif p.exists():
                p.unlink()
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    n_val = int(round(n * val_fraction))
    records = []
    for i, sample in enumerate(iter_samples(n, seed, canvas, ranges, workers)):
        sid = f"{i:06d}"
        cv2.imwrite(str(out / "images" / f"{sid}.png"), cv2.cvtColor(sample.image, cv2.COLOR_RGB2BGR))
        cv2.imwrite(str(out / "masks" / f"{sid}.png"), sample.mask)
        records.append(ManifestRecord.from_truth(sid, sample.truth, "val" if i >= n - n_val else "train"))
    with open(out / MANIFEST, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return DatasetManifest(out, records)


def spec_to_dict(spec: GaugeSpec) -> dict:
    return asdict(spec)
