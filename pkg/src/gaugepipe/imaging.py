"""Image resizing that preserves angles (uniform scale + padding only)."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np


@dataclass(frozen=True)
class Letterbox:
    scale: float
    pad_x: float
    pad_y: float

    def to_source(self, x: float, y: float) -> tuple[float, float]:
        """Map a point of the letterboxed image back to source pixels."""
        return (x - self.pad_x) / self.scale, (y - self.pad_y) / self.scale


def letterbox(image: np.ndarray, size: int, nearest: bool = False) -> tuple[np.ndarray, Letterbox]:
    """Pad to a square with edge replication, then resize to ``size x size``.

    Non-square stretching would change angles, so it is never used. Masks
    (``nearest=True``) are padded with background (0).
    """
    h, w = image.shape[:2]
    side = max(h, w)
    top, left = (side - h) // 2, (side - w) // 2
    if h != w:
        border = cv2.BORDER_CONSTANT if nearest else cv2.BORDER_REPLICATE
        image = cv2.copyMakeBorder(image, top, side - h - top, left, side - w - left, border, value=0)
    if side != size:
        interp = cv2.INTER_NEAREST if nearest else (cv2.INTER_AREA if side > size else cv2.INTER_LINEAR)
        image = cv2.resize(image, (size, size), interpolation=interp)
    scale = size / side
    return image, Letterbox(scale, left * scale, top * scale)
