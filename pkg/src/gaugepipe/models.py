"""Segmentation and reading networks.

``SegNet`` is a small encoder-decoder producing 3-class logits per pixel.
``ReadNet`` is a convolutional backbone whose first layer takes the RGB image
plus the segmentation map as a 4th channel, followed by three independent
360-way heads (start marker, end marker, needle tip).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .angles import NUM_BINS

HEAD_NAMES = ("start", "end", "needle")

# class id -> value of the 4th input channel of the reading network
MASK_CHANNEL_VALUES = (0.0, 0.5, 1.0)

SEG_WIDTHS = {"tiny": (8, 16, 32, 64), "small": (16, 32, 64, 128)}
READ_WIDTHS = {"tiny": (16, 32, 64, 64), "small": (32, 64, 96, 128), "large": (48, 96, 160, 256)}


@dataclass
class SegModelConfig:
    backbone_scale: str = "small"
    num_classes: int = 3
    input_size: int = 512
    learning_rate: float = 1e-3
    lr_step: int = 20
    lr_gamma: float = 0.1
    iterations: int = 80000
    epochs: int = 40
    batch_size: int = 18
    patience: int = 10
    weight_decay: float = 1e-4
    class_weights: tuple[float, float, float] = (1.0, 1.0, 5.0)

    def __post_init__(self):
        if self.num_classes != 3:
            raise ValueError("the segmentation network always predicts 3 classes")
        if self.backbone_scale not in SEG_WIDTHS:
            raise ValueError(f"unknown seg backbone_scale {self.backbone_scale!r}")
        if self.input_size % 8:
            raise ValueError("input_size must be a multiple of 8")
        self.class_weights = tuple(float(c) for c in self.class_weights)


@dataclass
class ReadModelConfig:
    backbone_scale: str = "small"
    input_size: int = 224
    input_channels: int = 4
    heads: int = 3
    head_bins: int = NUM_BINS
    harmonics: int = 4
    dropout_p: float | None = None
    embedding_dim: int = 256
    epochs: int = 120
    learning_rate: float = 1e-3
    lr_step: int = 50
    lr_gamma: float = 0.1
    batch_size: int = 32
    patience: int = 30
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.input_channels != 4:
            raise ValueError("the reading network takes exactly 4 input channels")
        if self.heads != 3 or self.head_bins != NUM_BINS:
            raise ValueError("the reading network has exactly three 360-way heads")
        if self.backbone_scale not in READ_WIDTHS:
            raise ValueError(f"unknown read backbone_scale {self.backbone_scale!r}")
        if self.dropout_p is None:
            self.dropout_p = 0.5 if self.backbone_scale == "large" else 0.4
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError(f"dropout_p out of [0, 1]: {self.dropout_p}")


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# --------------------------------------------------------------------------
# building blocks


def _cbr(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, stride, 1, bias=False),
                         nn.BatchNorm2d(cout), nn.ReLU(inplace=True))


class SegNet(nn.Module):
    """U-shaped encoder-decoder with three downsampling stages."""

    def __init__(self, config: SegModelConfig):
        super().__init__()
        self.config = config
        w1, w2, w3, w4 = SEG_WIDTHS[config.backbone_scale]
        self.enc1 = nn.Sequential(_cbr(3, w1), _cbr(w1, w1))
        self.enc2 = nn.Sequential(_cbr(w1, w2, 2), _cbr(w2, w2))
        self.enc3 = nn.Sequential(_cbr(w2, w3, 2), _cbr(w3, w3))
        self.mid = nn.Sequential(_cbr(w3, w4, 2), _cbr(w4, w4))
        self.dec3 = nn.Sequential(_cbr(w4 + w3, w3), _cbr(w3, w3))
        self.dec2 = nn.Sequential(_cbr(w3 + w2, w2), _cbr(w2, w2))
        self.dec1 = nn.Sequential(_cbr(w2 + w1, w1), _cbr(w1, w1))
        self.classifier = nn.Conv2d(w1, config.num_classes, 1)

    @staticmethod
    def _up(x, ref):
        return F.interpolate(x, size=ref.shape[-2:], mode="bilinear", align_corners=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = self.enc1(x)
        e2 = self.enc2(e1)
        e3 = self.enc3(e2)
        m = self.mid(e3)
        d3 = self.dec3(torch.cat([self._up(m, e3), e3], 1))
        d2 = self.dec2(torch.cat([self._up(d3, e2), e2], 1))
        d1 = self.dec1(torch.cat([self._up(d2, e1), e1], 1))
        return self.classifier(d1)


def extend_first_layer(weights3):
    """Append a 4th input channel equal to the per-filter mean of the RGB slices.

    Accepts a torch tensor or numpy array shaped ``(out, 3, kh, kw)`` and
    returns the same type shaped ``(out, 4, kh, kw)``.
    """
    if weights3.ndim != 4 or weights3.shape[1] != 3:
        raise ValueError(f"expected filters shaped (out, 3, kh, kw), got {tuple(weights3.shape)}")
    if isinstance(weights3, torch.Tensor):
        return torch.cat([weights3, weights3.mean(dim=1, keepdim=True)], dim=1)
    w = np.asarray(weights3)
    return np.concatenate([w, w.mean(axis=1, keepdims=True)], axis=1)


class CircularHead(nn.Module):
    """Linear map from the embedding to 360 bin logits.

    The weight matrix is tied to a truncated Fourier basis over the bin
    centers, so neighbouring bins share parameters and the logits vary
    smoothly around the circle. With few training images per degree this
    keeps the head from memorizing isolated bins.
    """

    def __init__(self, in_features: int, harmonics: int, bins: int = NUM_BINS):
        super().__init__()
        self.coef = nn.Linear(in_features, 2 * harmonics + 1)
        theta = (torch.arange(bins, dtype=torch.float64) + 0.5) * (2 * math.pi / bins)
        cols = [torch.ones(bins, dtype=torch.float64)]
        for k in range(1, harmonics + 1):
            cols += [torch.cos(k * theta), torch.sin(k * theta)]
        self.register_buffer("basis", torch.stack(cols, 1).float())

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.coef(z) @ self.basis.T


class ReadNet(nn.Module):
    """Shared convolutional backbone with three independent 360-way heads.

    The stem is built for RGB and widened to 4 channels with
    :func:`extend_first_layer`. Normalized pixel coordinates are appended to
    the stem output so later layers can tell where the needle is relative to
    the image center.
    """

    def __init__(self, config: ReadModelConfig):
        super().__init__()
        self.config = config
        w1, w2, w3, w4 = READ_WIDTHS[config.backbone_scale]
        stem = nn.Conv2d(3, w1, 3, 2, 1, bias=False)
        with torch.no_grad():
            wide = nn.Conv2d(4, w1, 3, 2, 1, bias=False)
            wide.weight.copy_(extend_first_layer(stem.weight))
        self.stem = nn.Sequential(wide, nn.BatchNorm2d(w1), nn.ReLU(inplace=True))
        self.features = nn.Sequential(
            _cbr(w1 + 2, w1), _cbr(w1, w2, 2), _cbr(w2, w2), _cbr(w2, w3, 2), _cbr(w3, w3),
            _cbr(w3, w4, 2), nn.AdaptiveAvgPool2d(8), nn.Flatten(),
            nn.Linear(w4 * 64, config.embedding_dim), nn.ReLU(inplace=True),
            nn.Dropout(config.dropout_p),
        )
        self.heads = nn.ModuleDict(
            {name: CircularHead(config.embedding_dim, config.harmonics) for name in HEAD_NAMES})

    @property
    def first_layer(self) -> nn.Conv2d:
        return self.stem[0]

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != 4:
            raise ValueError(f"expected 4 input channels, got {x.shape[1]}")
        h = self.stem(x)
        n, _, hh, ww = h.shape
        ys = torch.linspace(-1, 1, hh, device=h.device, dtype=h.dtype)
        xs = torch.linspace(-1, 1, ww, device=h.device, dtype=h.dtype)
        yy, xx = torch.meshgrid(ys, xs, indexing="ij")
        h = torch.cat([h, xx.expand(n, 1, hh, ww), yy.expand(n, 1, hh, ww)], 1)
        return self.features(h)

    def forward(self, x: torch.Tensor) -> dict[str, torch.Tensor]:
        z = self.embed(x)
        return {name: head(z) for name, head in self.heads.items()}


class HeadLogits(NamedTuple):
    start: np.ndarray
    end: np.ndarray
    needle: np.ndarray

    def bins(self) -> tuple[int, int, int]:
        # np.argmax returns the first maximum, i.e. ties go to the lowest bin
        return tuple(int(np.argmax(v)) for v in self)

    def probabilities(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        out = []
        for v in self:
            e = np.exp(v - v.max())
            out.append(e / e.sum())
        return tuple(out)


# --------------------------------------------------------------------------
# tensors <-> arrays


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """HxWx3 uint8 (or HxWxC float in [0, 1]) -> 1xCxHxW float tensor."""
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        arr = arr.astype(np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=np.float32))[None]


def mask_to_channel(mask: np.ndarray) -> np.ndarray:
    """Class map {0, 1, 2} -> float map {0, 0.5, 1.0}."""
    return np.asarray(MASK_CHANNEL_VALUES, np.float32)[np.asarray(mask, np.int64)]


def stack_image_mask(image: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    """HxWx4 float32 input of the reading network; ``mask=None`` gives an all-background channel."""
    rgb = np.asarray(image, np.float32) / 255.0 if image.dtype == np.uint8 else np.asarray(image, np.float32)
    ch = np.zeros(rgb.shape[:2], np.float32) if mask is None else mask_to_channel(mask)
    return np.concatenate([rgb, ch[..., None]], axis=2)


def seg_forward(model: SegNet, image: np.ndarray) -> np.ndarray:
    """Per-pixel class probabilities (HxWx3) for one RGB image at the model's input size."""
    size = model.config.input_size
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[:2] != (size, size):
        raise ValueError(f"expected a {size}x{size}x3 image, got {image.shape}")
    model.eval()
    with torch.no_grad():
        probs = torch.softmax(model(image_to_tensor(image)), dim=1)[0]
    return probs.permute(1, 2, 0).numpy()


def predict_mask(model: SegNet, image: np.ndarray) -> np.ndarray:
    return np.argmax(seg_forward(model, image), axis=2).astype(np.uint8)


def read_forward(model: ReadNet, image4: np.ndarray) -> HeadLogits:
    """Three 360-bin logit vectors for one HxWx4 input (inference mode)."""
    if image4.ndim != 3 or image4.shape[2] != 4:
        raise ValueError(f"expected an HxWx4 input, got {image4.shape}")
    model.eval()
    with torch.no_grad():
        out = model(image_to_tensor(image4))
    return HeadLogits(*(out[name][0].numpy() for name in HEAD_NAMES))


def read_loss(logits, truth_bins) -> torch.Tensor:
    """Sum of the three per-head cross-entropy losses.

    ``logits`` is a :class:`HeadLogits`, a dict keyed by head name, or a
    sequence of three tensors; each is ``(360,)`` or ``(N, 360)``.
    ``truth_bins`` holds three bin indices (or three ``(N,)`` index tensors).
    """
    if isinstance(logits, dict):
        logits = [logits[name] for name in HEAD_NAMES]
    total = 0.0
    for lg, target in zip(logits, truth_bins, strict=True):
        lg = torch.as_tensor(lg)
        target = torch.as_tensor(target, dtype=torch.long)
        if torch.any(target < 0) or torch.any(target >= NUM_BINS):
            raise ValueError(f"bin index out of [0, {NUM_BINS - 1}]: {target.tolist()}")
        if lg.ndim == 1:
            lg, target = lg[None], target.reshape(1)
        total = total + F.cross_entropy(lg, target)
    return total
