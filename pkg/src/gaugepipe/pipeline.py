"""End-to-end gauge reading from a single image or a frame sequence."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import cv2
import numpy as np

from .angles import (
    AngleTriple,
    DegenerateGaugeError,
    GaugeRange,
    Point2,
    angle_to_reading,
    dequantize,
    point_at,
)
from .imaging import letterbox
from .models import HEAD_NAMES, ReadNet, SegNet, predict_mask, read_forward, stack_image_mask

LOW_CONFIDENCE = 0.2
CROP_SCALE = 2.4  # crop side as a multiple of the detected radius

# overlay marker colors (RGB)
LANDMARK_COLORS = {"start": (0, 200, 0), "end": (230, 0, 0), "needle": (30, 90, 255)}


class ImageDecodeError(ValueError):
    pass


@dataclass(frozen=True)
class CropRegion:
    center: Point2
    radius: float
    bbox: tuple[int, int, int, int]  # x, y, w, h
    source: str  # "circle-detector" or "full-image"

    @classmethod
    def full(cls, shape) -> "CropRegion":
        h, w = shape[:2]
        return cls(Point2(w / 2.0, h / 2.0), min(h, w) / 2.0, (0, 0, w, h), "full-image")

    def cut(self, image: np.ndarray) -> np.ndarray:
        x, y, w, h = self.bbox
        return image[y:y + h, x:x + w]


@dataclass
class ReadingResult:
    angles: AngleTriple
    bins: tuple[int, int, int]
    reading: float | None
    unit: str | None
    crop: CropRegion
    mask_summary: tuple[float, float, float]  # background, case, needle pixel fractions
    flags: dict[str, bool] = field(default_factory=dict)
    confidence: tuple[float, float, float] = (1.0, 1.0, 1.0)  # top-1 probability per head

    def flag_string(self) -> str:
        return ";".join(name for name, on in self.flags.items() if on)


def to_rgb(image) -> np.ndarray:
    """Load/convert to HxWx3 uint8 RGB. Paths are decoded with OpenCV."""
    if isinstance(image, (str, Path)):
        bgr = cv2.imread(str(image), cv2.IMREAD_COLOR)
        if bgr is None:
            raise ImageDecodeError(f"cannot decode image {image}")
        return cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    if image is None:
        raise ImageDecodeError("no image data")
    arr = np.asarray(image)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4) or arr.size == 0:
        raise ImageDecodeError(f"unsupported image shape {arr.shape}")
    arr = arr[..., :3]
    if arr.dtype != np.uint8:
        arr = np.clip(arr * (255.0 if arr.max() <= 1.0 else 1.0), 0, 255).astype(np.uint8)
    return np.ascontiguousarray(arr)


def detect_gauge_circle(image, min_radius: float = 0.05, max_radius: float = 0.5,
                        accumulator_threshold: float = 0.6, canny_threshold: float = 150.0) -> CropRegion:
    """Crop around the strongest Hough circle, or the whole image if none is found.

    Uses OpenCV's gradient Hough variant (``HOUGH_GRADIENT_ALT``), where the
    accumulator threshold is a circle-perfectness score in (0, 1]. Radii are
    searched between ``min_radius`` and ``max_radius`` times the shorter
    image side. The crop is a square of side 2.4 x radius, clipped to the
    image.
    """
    rgb = to_rgb(image)
    h, w = rgb.shape[:2]
    gray = cv2.medianBlur(cv2.cvtColor(rgb, cv2.COLOR_RGB2GRAY), 3)
    side = min(h, w)
    circles = cv2.HoughCircles(gray, cv2.HOUGH_GRADIENT_ALT, dp=1.5, minDist=side / 4,
                               param1=canny_threshold, param2=accumulator_threshold,
                               minRadius=max(1, int(min_radius * side)),
                               maxRadius=int(math.ceil(max_radius * side)))
    if circles is None or len(circles[0]) == 0:
        return CropRegion.full(rgb.shape)
    # best-supported circle comes first
    cx, cy, r = (float(v) for v in circles[0][0])
    if r <= 0:
        return CropRegion.full(rgb.shape)
    half = CROP_SCALE * r / 2.0
    x0, y0 = max(0, int(math.floor(cx - half))), max(0, int(math.floor(cy - half)))
    x1, y1 = min(w, int(math.ceil(cx + half))), min(h, int(math.ceil(cy + half)))
    return CropRegion(Point2(cx, cy), r, (x0, y0, x1 - x0, y1 - y0), "circle-detector")


def prepare_inputs(image: np.ndarray, seg_model: SegNet | None, read_input_size: int,
                   use_seg: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Segment ``image`` and assemble the 4-channel reading input.

    Returns ``(image4, mask)`` where ``mask`` is the class map at the
    segmentation input size (all background when ``use_seg`` is off).
    """
    if use_seg:
        if seg_model is None:
            raise ValueError("use_seg=True needs a segmentation model")
        seg_in, _ = letterbox(image, seg_model.config.input_size)
        mask = predict_mask(seg_model, seg_in)
    else:
        size = seg_model.config.input_size if seg_model is not None else read_input_size
        mask = np.zeros((size, size), np.uint8)
    rgb, _ = letterbox(image, read_input_size)
    read_mask, _ = letterbox(mask, read_input_size, nearest=True)
    return stack_image_mask(rgb, read_mask), mask


def read_gauge(image, seg_model: SegNet | None, read_model: ReadNet,
               gauge_range: GaugeRange | None = None, *, use_crop: bool = True,
               use_seg: bool = True, low_confidence: float = LOW_CONFIDENCE) -> ReadingResult:
    """Read one gauge image.

    ``use_seg=False`` replaces the predicted mask channel by an all-background
    channel (segmentation ablation). With ``gauge_range`` the physical
    reading is filled in.
    """
    rgb = to_rgb(image)
    crop = detect_gauge_circle(rgb) if use_crop else CropRegion.full(rgb.shape)
    patch = crop.cut(rgb)
    image4, mask = prepare_inputs(patch, seg_model, read_model.config.input_size, use_seg)
    logits = read_forward(read_model, image4)
    bins = logits.bins()
    angles = AngleTriple(*(dequantize(b) for b in bins))
    confidence = tuple(float(p.max()) for p in logits.probabilities())
    counts = np.bincount(mask.ravel(), minlength=3)[:3]
    summary = tuple(float(c) for c in counts / mask.size)

    flags = {"out_of_scale": False, "low_confidence": min(confidence) < low_confidence,
             "degenerate": False}
    reading = unit = None
    if gauge_range is not None:
        try:
            r = angle_to_reading(angles, gauge_range)
            reading, unit = r.value, r.unit
            flags["out_of_scale"] = r.out_of_scale
        except DegenerateGaugeError:
            flags["degenerate"] = True
    return ReadingResult(angles, bins, reading, unit, crop, summary, flags, confidence)


@dataclass
class VideoResult:
    results: list[ReadingResult]
    frame_ids: list[str]
    error: dict | None = None


def _frames_from(source) -> Iterable:
    if isinstance(source, (str, Path)):
        cap = cv2.VideoCapture(str(source))
        if not cap.isOpened():
            raise ImageDecodeError(f"cannot open video {source}")
        total = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        index = 0
        try:
            while True:
                ok, bgr = cap.read()
                if not ok:
                    if 0 < total and index < total:
                        yield None  # stream ended before its advertised length
                    return
                index += 1
                yield cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
        finally:
            cap.release()
    else:
        yield from source


def read_video(frames, seg_model: SegNet | None, read_model: ReadNet,
               gauge_range: GaugeRange | None = None, **options) -> VideoResult:
    """Independent per-frame readings (no temporal smoothing).

    ``frames`` is a video path or an iterable of images. A frame that cannot
    be decoded stops processing; results so far are kept alongside an error
    record.
    """
    out = VideoResult([], [])
    index = 0
    try:
        for index, frame in enumerate(_frames_from(frames)):
            res = read_gauge(frame, seg_model, read_model, gauge_range, **options)
            out.results.append(res)
            out.frame_ids.append(str(index))
    except ImageDecodeError as exc:
        out.error = {"frame": len(out.results), "error": type(exc).__name__, "message": str(exc)}
    if not out.results and out.error is None:
        raise ValueError("empty frame sequence")
    return out


PREDICTION_COLUMNS = ("frame_id", "start_deg", "end_deg", "needle_deg", "reading", "unit", "flags")


def write_predictions_csv(path, results: Iterable[ReadingResult], frame_ids: Iterable[str]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PREDICTION_COLUMNS)
        for fid, res in zip(frame_ids, results, strict=True):
            a = res.angles
            writer.writerow([fid, f"{a.start:.4f}", f"{a.end:.4f}", f"{a.needle:.4f}",
                             "" if res.reading is None else f"{res.reading:.6g}",
                             res.unit or "", res.flag_string()])
    return path


def draw_overlay(image, result: ReadingResult) -> np.ndarray:
    """Copy of ``image`` with the three landmarks drawn as filled circles."""
    rgb = to_rgb(image).copy()
    crop = result.crop
    x, y, w, h = crop.bbox
    center = Point2(x + w / 2.0, y + h / 2.0) if crop.source == "full-image" else crop.center
    radius = 0.7 * min(w, h) / 2.0 if crop.source == "full-image" else crop.radius
    dot = max(2, int(round(radius * 0.06)))
    cv2.circle(rgb, (int(round(center.x)), int(round(center.y))), dot, (255, 255, 255), -1, cv2.LINE_AA)
    for name in HEAD_NAMES:
        p = point_at(center, getattr(result.angles, name), 0.85 * radius)
        cv2.circle(rgb, (int(round(p.x)), int(round(p.y))), dot, LANDMARK_COLORS[name], -1, cv2.LINE_AA)
    if result.reading is not None:
        cv2.putText(rgb, f"{result.reading:.3g} {result.unit or ''}", (5, max(12, dot * 4)),
                    cv2.FONT_HERSHEY_SIMPLEX, 0.4, (255, 255, 0), 1, cv2.LINE_AA)
    return rgb
