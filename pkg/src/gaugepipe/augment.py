"""Training-time augmentation for closing the synthetic-to-real gap.

Both entry points draw every random quantity from a generator seeded with
``seed``, in a fixed order, so an augmented sample is reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import cv2
import numpy as np

from .angles import AngleTriple, Point2, wrap360
from .synth import GroundTruth, Sample

_LUMA = np.array([0.299, 0.587, 0.114], np.float32)
_MASK_LEVELS = np.array([0.0, 0.5, 1.0], np.float32)


@dataclass(frozen=True)
class AugmentPolicy:
    contrast_range: tuple[float, float] = (0.6, 1.4)
    brightness_range: tuple[float, float] = (-0.25, 0.25)
    saturation_range: tuple[float, float] = (0.5, 1.5)
    max_rotation: float = 20.0  # degrees, segmentation pipeline only
    blur_sigma_range: tuple[float, float] = (0.0, 2.5)
    cutout_count: tuple[int, int] = (1, 4)
    cutout_size: tuple[float, float] = (0.05, 0.10)  # fraction of the shorter image side
    enabled: bool = True

    def __post_init__(self):
        for name in ("contrast_range", "brightness_range", "saturation_range",
                     "blur_sigma_range", "cutout_count", "cutout_size"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
            object.__setattr__(self, name, (lo, hi))
        if not 0.0 <= self.max_rotation <= 20.0:
            raise ValueError(f"max_rotation must lie in [0, 20], got {self.max_rotation}")
        if self.blur_sigma_range[0] < 0 or self.cutout_count[0] < 0 or self.cutout_size[0] < 0:
            raise ValueError("blur, cutout count and cutout size must be non-negative")

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(enabled=False)


def _draw_photometric(rng, policy):
    return (rng.uniform(*policy.contrast_range), rng.uniform(*policy.brightness_range),
            rng.uniform(*policy.saturation_range))


def _photometric(rgb: np.ndarray, contrast: float, brightness: float, saturation: float) -> np.ndarray:
    """Contrast about the mean luminance, additive brightness, saturation blend. ``rgb`` in [0, 1]."""
    luma = rgb @ _LUMA
    out = (rgb - luma.mean()) * contrast + luma.mean() + brightness
    gray = (out @ _LUMA)[..., None]
    out = gray + (out - gray) * saturation
    return np.clip(out, 0.0, 1.0)


def _blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    if sigma < 0.1:
        return arr
    return cv2.GaussianBlur(arr, (0, 0), sigma)


def cutout_boxes(rng, shape, count_range, size_range) -> list[tuple[int, int, int]]:
    """Non-overlapping squares ``(x, y, side)``; falls back to overlap when crowded."""
    h, w = shape
    count = int(rng.integers(count_range[0], count_range[1] + 1))
    boxes = []
    for _ in range(count):
        side = max(1, int(round(rng.uniform(*size_range) * min(h, w))))
        for attempt in range(50):
            x = int(rng.integers(0, w - side + 1))
            y = int(rng.integers(0, h - side + 1))
            # keep a 1 px gap so neighbouring squares stay separate components
            clear = all(x > bx + bs or bx > x + side or y > by + bs or by > y + side
                        for bx, by, bs in boxes)
            if clear:
                break
        boxes.append((x, y, side))
    return boxes


def rotate_sample(sample: Sample, delta: float) -> Sample:
    """Rotate image and mask clockwise on screen by ``delta`` degrees about the image center.

    The image is interpolated bilinearly, the mask by nearest neighbour, and
    every ground-truth angle shifts by exactly ``delta``.
    """
    h, w = sample.mask.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    # cv2 treats positive angles as counterclockwise on screen
    mat = cv2.getRotationMatrix2D((cx, cy), -delta, 1.0)
    image = cv2.warpAffine(sample.image, mat, (w, h), flags=cv2.INTER_LINEAR,
                           borderMode=cv2.BORDER_REPLICATE)
    mask = cv2.warpAffine(sample.mask, mat, (w, h), flags=cv2.INTER_NEAREST,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=0)
    t = sample.truth
    c, s = math.cos(math.radians(delta)), math.sin(math.radians(delta))
    dx, dy = t.center_px.x - cx, t.center_px.y - cy
    center = Point2(cx + dx * c - dy * s, cy + dx * s + dy * c)
    truth = GroundTruth(wrap360(t.start + delta), wrap360(t.end + delta), wrap360(t.needle + delta),
                        t.range, center, t.radius_px)
    return Sample(image=image, mask=mask, truth=truth, spec=sample.spec)


def augment_seg(sample: Sample, policy: AugmentPolicy, seed: int) -> Sample:
    """Photometric jitter, rotation, blur and cutout for segmentation training.

    Cutout zeroes image pixels only; the mask is changed by the rotation alone.
    """
    if not policy.enabled:
        return sample
    rng = np.random.default_rng(seed)
    params = _draw_photometric(rng, policy)
    delta = rng.uniform(-policy.max_rotation, policy.max_rotation)
    sigma = rng.uniform(*policy.blur_sigma_range)
    boxes = cutout_boxes(rng, sample.mask.shape, policy.cutout_count, policy.cutout_size)

    rgb = _photometric(sample.image.astype(np.float32) / 255.0, *params)
    out = replace(sample, image=np.round(rgb * 255.0).astype(np.uint8))
    if delta != 0.0:
        out = rotate_sample(out, delta)
    image = _blur(out.image, sigma)
    for x, y, side in boxes:
        image[y:y + side, x:x + side] = 0
    return replace(out, image=image)


def augment_read(image4: np.ndarray, labels: AngleTriple, policy: AugmentPolicy,
                 seed: int) -> tuple[np.ndarray, AngleTriple]:
    """Augment a 4-channel reading-network input; never rotates, so labels pass through.

    Photometric jitter touches the RGB channels only. Blur and cutout touch
    all four; the blurred segmentation channel is snapped back onto the class
    levels {0, 0.5, 1}.
    """
    if image4.ndim != 3 or image4.shape[2] != 4:
        raise ValueError(f"expected an HxWx4 array, got shape {image4.shape}")
    if not policy.enabled:
        return image4, labels
    rng = np.random.default_rng(seed)
    params = _draw_photometric(rng, policy)
    sigma = rng.uniform(*policy.blur_sigma_range)
    boxes = cutout_boxes(rng, image4.shape[:2], policy.cutout_count, policy.cutout_size)

    out = np.empty_like(image4, dtype=np.float32)
    out[..., :3] = _photometric(image4[..., :3].astype(np.float32), *params)
    out[..., 3] = image4[..., 3]
    out = _blur(out, sigma)
    levels = np.abs(out[..., 3:4] - _MASK_LEVELS).argmin(axis=2)
    out[..., 3] = _MASK_LEVELS[levels]
    for x, y, side in boxes:
        out[y:y + side, x:x + side, :] = 0.0
    return out, labels
