"""Training loops, checkpoints and metric logs for both networks."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .angles import GaugeRange, Point2, circular_abs_error, dequantize, quantize
from .augment import AugmentPolicy, augment_read, augment_seg
from .imaging import letterbox
from .models import (
    HEAD_NAMES,
    ReadModelConfig,
    ReadNet,
    SegModelConfig,
    SegNet,
    config_dict,
    mask_to_channel,
)
from .synth import GroundTruth, Sample, read_manifest

log = logging.getLogger(__name__)

MASK_SOURCES = ("predicted", "oracle", "none")


class CheckpointError(ValueError):
    """Checkpoint file does not match the requested model kind or config."""


def config_hash(kind: str, cfg) -> str:
    blob = json.dumps({"kind": kind, **config_dict(cfg)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class ArraySet:
    """In-memory dataset split, already letterboxed to one square size."""

    ids: list[str]
    images: np.ndarray  # N x S x S x 3 uint8
    masks: np.ndarray  # N x S x S uint8
    labels: np.ndarray  # N x 3 degrees (start, end, needle)

    def __len__(self):
        return len(self.ids)


def load_split(data_dir, split: str, size: int) -> ArraySet:
    """Load one split of a generated dataset, letterboxed to ``size``."""
    manifest = read_manifest(data_dir)
    recs = manifest.split(split)
    images, masks, labels = [], [], []
    for rec in recs:
        img, mask = manifest.load(rec)
        images.append(letterbox(img, size)[0])
        masks.append(letterbox(mask, size, nearest=True)[0])
        labels.append(rec.angles.as_tuple())
    if not recs:
        return ArraySet([], np.zeros((0, size, size, 3), np.uint8),
                        np.zeros((0, size, size), np.uint8), np.zeros((0, 3)))
    return ArraySet([r.id for r in recs], np.stack(images), np.stack(masks), np.array(labels, float))


def _heldout_split(data_dir, size, train: ArraySet) -> tuple[ArraySet, ArraySet]:
    val = load_split(data_dir, "val", size)
    if len(train) == 0:
        raise ValueError(f"dataset {data_dir} has no training samples")
    if len(val):
        return train, val
    # no flagged validation samples: hold out the last 10%
    k = max(1, len(train) // 10)
    cut = len(train) - k
    part = lambda a, s: ArraySet(a.ids[s], a.images[s], a.masks[s], a.labels[s])  # noqa: E731
    return part(train, slice(0, cut)), part(train, slice(cut, None))


def _to_tensor(images: np.ndarray) -> torch.Tensor:
    arr = images.astype(np.float32)
    if images.dtype == np.uint8:
        arr /= 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


@dataclass
class TrainResult:
    checkpoint: Path  # best held-out checkpoint
    last_checkpoint: Path
    metrics_csv: Path
    history: list[dict] = field(default_factory=list)

    @property
    def best(self) -> dict:
        """Logged row of the best held-out epoch (IoU: highest, MAE: lowest)."""
        sign = -1.0 if self.history[0]["metric"] == "miou" else 1.0
        return min(self.history, key=lambda row: sign * row["heldout"])


class _MetricLog:
    def __init__(self, path: Path, columns: list[str], append: bool):
        self.path = path
        self.columns = columns
        if not append or not path.exists():
            with open(path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(columns)

    def write(self, row: dict):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([row[c] for c in self.columns])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (v if k == "metric" else float(v)) for k, v in r.items()} for r in rows]


def _save(path: Path, payload: dict):
    tmp = path.with_suffix(".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, kind: str | None = None):
    """Rebuild the model stored in ``path``; returns ``(model, payload)``."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or "kind" not in payload:
        raise CheckpointError(f"{path} is not a gaugepipe checkpoint")
    if kind is not None and payload["kind"] != kind:
        raise CheckpointError(f"{path} holds a {payload['kind']!r} model, expected {kind!r}")
    if payload["kind"] == "seg":
        cfg = SegModelConfig(**payload["config"])
        model = SegNet(cfg)
    else:
        cfg = ReadModelConfig(**payload["config"])
        model = ReadNet(cfg)
    if config_hash(payload["kind"], cfg) != payload["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload


def _optim(model, cfg):
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=max(1, cfg.lr_step), gamma=cfg.lr_gamma)
    return opt, sched


def _resume(model, opt, sched, resume, kind, cfg):
    if resume is None:
        return 0, None
    payload = torch.load(resume, map_location="cpu", weights_only=False)
    if payload.get("kind") != kind or payload.get("config_hash") != config_hash(kind, cfg):
        raise CheckpointError(f"cannot resume {kind} training from {resume}: incompatible checkpoint")
    model.load_state_dict(payload["state_dict"])
    opt.load_state_dict(payload["optimizer"])
    sched.load_state_dict(payload["scheduler"])
    torch.set_rng_state(payload["torch_rng"])
    return payload["epoch"] + 1, payload


# --------------------------------------------------------------------------
# segmentation


def seg_predict(model: SegNet, images: np.ndarray, batch: int = 32) -> np.ndarray:
    """Argmax class maps for a stack of images already at the model input size."""
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            out.append(model(_to_tensor(images[i:i + batch])).argmax(1).numpy().astype(np.uint8))
    return np.concatenate(out) if out else np.zeros((0,) + images.shape[1:3], np.uint8)


def mean_iou(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Dataset-pooled IoU per class and their mean."""
    inter = np.array([np.count_nonzero((pred == c) & (truth == c)) for c in range(3)], float)
    union = np.array([np.count_nonzero((pred == c) | (truth == c)) for c in range(3)], float)
    ious = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return float(ious.mean()), ious


def train_seg(data_dir, config: SegModelConfig, out_dir, policy: AugmentPolicy | None = None,
              seed: int = 0, resume=None) -> TrainResult:
    """Train the segmentation network on a generated dataset.

    Held-out metric is the pooled mean IoU over the three classes (higher is
    better); training stops after ``config.patience`` epochs without gain.
    """
    policy = policy or AugmentPolicy()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = config.input_size
    train, val = _heldout_split(data_dir, size, load_split(data_dir, "train", size))

    torch.manual_seed(seed)
    model = SegNet(config)
    opt, sched = _optim(model, config)
    start_epoch, state = _resume(model, opt, sched, resume, "seg", config)
    best = state["best"] if state else -np.inf
    stale = state["stale"] if state else 0
    weights = torch.tensor(config.class_weights, dtype=torch.float32)
    columns = ["epoch", "loss", "metric", "heldout", "iou_background", "iou_case", "iou_needle"]
    mlog = _MetricLog(out / "seg_metrics.csv", columns, append=resume is not None)
    history = read_metrics(mlog.path) if resume is not None else []
    hsh = config_hash("seg", config)

    for epoch in range(start_epoch, config.epochs):
        model.train()
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            imgs, masks = [], []
            for j in idx:
                smp = Sample(train.images[j], train.masks[j],
                             GroundTruth(*train.labels[j], GaugeRange(0, 1), Point2(size / 2, size / 2), size / 2))
                smp = augment_seg(smp, policy, seed=int(rng.integers(2**31)))
                imgs.append(smp.image)
                masks.append(smp.mask)
            logits = model(_to_tensor(np.stack(imgs)))
            loss = F.cross_entropy(logits, torch.from_numpy(np.stack(masks).astype(np.int64)), weight=weights)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        sched.step()

        miou, ious = mean_iou(seg_predict(model, val.images), val.masks)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "metric": "miou", "heldout": miou,
               "iou_background": ious[0], "iou_case": ious[1], "iou_needle": ious[2]}
        history.append(row)
        mlog.write(row)
        log.info("seg epoch %d loss %.4f miou %.4f needle %.4f", epoch, row["loss"], miou, ious[2])
        improved = miou > best
        if improved:
            best, stale = miou, 0
        else:
            stale += 1
        payload = {"kind": "seg", "config": config_dict(config), "config_hash": hsh,
                   "state_dict": model.state_dict(), "optimizer": opt.state_dict(),
                   "scheduler": sched.state_dict(), "torch_rng": torch.get_rng_state(),
                   "epoch": epoch, "metric": "miou", "heldout": miou, "best": best, "stale": stale,
                   "seed": seed, "augment": policy.enabled}
        _save(out / "seg_last.pt", payload)
        if improved:
            shutil.copyfile(out / "seg_last.pt", out / "seg_best.pt")
        if stale >= config.patience:
            break
    return TrainResult(out / "seg_best.pt", out / "seg_last.pt", mlog.path, history)


def evaluate_seg(model: SegNet, data_dir, split: str = "val") -> tuple[float, np.ndarray]:
    data = load_split(data_dir, split, model.config.input_size)
    return mean_iou(seg_predict(model, data.images), data.masks)


# --------------------------------------------------------------------------
# reading


def build_read_inputs(data: ArraySet, size: int, mask_source: str, seg_model: SegNet | None = None) -> np.ndarray:
    """N x size x size x 4 float32 inputs: RGB in [0, 1] plus the mask channel."""
    if mask_source not in MASK_SOURCES:
        raise ValueError(f"mask_source must be one of {MASK_SOURCES}")
    if mask_source == "predicted":
        if seg_model is None:
            raise ValueError("mask_source='predicted' needs a segmentation model")
        seg_size = seg_model.config.input_size
        seg_in = np.stack([letterbox(im, seg_size)[0] for im in data.images]) if len(data) else data.images
        masks = seg_predict(seg_model, seg_in)
    elif mask_source == "oracle":
        masks = data.masks
    else:
        masks = np.zeros(data.masks.shape, np.uint8)
    out = np.empty((len(data), size, size, 4), np.float32)
    for i in range(len(data)):
        out[i, ..., :3] = letterbox(data.images[i], size)[0].astype(np.float32) / 255.0
        out[i, ..., 3] = mask_to_channel(letterbox(masks[i], size, nearest=True)[0])
    return out


def read_predict(model: ReadNet, inputs: np.ndarray, batch: int = 64) -> np.ndarray:
    """Predicted (start, end, needle) angles, N x 3, via bin-center of each argmax."""
    model.eval()
    bins = []
    with torch.no_grad():
        for i in range(0, len(inputs), batch):
            out = model(_to_tensor(inputs[i:i + batch]))
            bins.append(torch.stack([out[n].argmax(1) for n in HEAD_NAMES], 1).numpy())
    return dequantize(np.concatenate(bins)) if bins else np.zeros((0, 3))


def angle_errors(pred: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Mean circular error per landmark (start, end, needle)."""
    return np.asarray(circular_abs_error(pred, labels)).mean(axis=0)


def train_read(data_dir, config: ReadModelConfig, out_dir, seg_model: SegNet | None = None,
               mask_source: str = "predicted", policy: AugmentPolicy | None = None,
               seed: int = 0, resume=None) -> TrainResult:
    """Train the reading network.

    ``mask_source`` picks the 4th input channel: ``"predicted"`` runs the
    frozen ``seg_model`` on each image, ``"oracle"`` uses ground-truth masks
    and ``"none"`` feeds an all-background channel (segmentation ablation).
    Held-out metric is the needle circular MAE in degrees (lower is better).
    """
    policy = policy or AugmentPolicy()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = config.input_size
    load_size = seg_model.config.input_size if seg_model is not None else size
    train, val = _heldout_split(data_dir, load_size, load_split(data_dir, "train", load_size))
    x_train = build_read_inputs(train, size, mask_source, seg_model)
    x_val = build_read_inputs(val, size, mask_source, seg_model)
    y_train = torch.from_numpy(quantize(train.labels).astype(np.int64))

    torch.manual_seed(seed)
    model = ReadNet(config)
    opt, sched = _optim(model, config)
    start_epoch, state = _resume(model, opt, sched, resume, "read", config)
    best = state["best"] if state else np.inf
    stale = state["stale"] if state else 0
    columns = ["epoch", "loss", "metric", "heldout", "mae_start", "mae_end", "mae_needle"]
    mlog = _MetricLog(out / "read_metrics.csv", columns, append=resume is not None)
    history = read_metrics(mlog.path) if resume is not None else []
    hsh = config_hash("read", config)

    for epoch in range(start_epoch, config.epochs):
        model.train()
        rng = np.random.default_rng([seed, epoch, 1])
        order = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            batch = np.stack([augment_read(x_train[j], None, policy, int(rng.integers(2**31)))[0]
                              for j in idx])
            logits = model(_to_tensor(batch))
            target = y_train[idx]
            loss = sum(F.cross_entropy(logits[name], target[:, k]) for k, name in enumerate(HEAD_NAMES))
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        sched.step()

        errs = angle_errors(read_predict(model, x_val), val.labels)
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "metric": "needle_mae",
               "heldout": float(errs[2]), "mae_start": float(errs[0]), "mae_end": float(errs[1]),
               "mae_needle": float(errs[2])}
        history.append(row)
        mlog.write(row)
        log.info("read epoch %d loss %.4f mae %s", epoch, row["loss"], np.round(errs, 2))
        improved = errs[2] < best
        if improved:
            best, stale = float(errs[2]), 0
        else:
            stale += 1
        payload = {"kind": "read", "config": config_dict(config), "config_hash": hsh,
                   "state_dict": model.state_dict(), "optimizer": opt.state_dict(),
                   "scheduler": sched.state_dict(), "torch_rng": torch.get_rng_state(),
                   "epoch": epoch, "metric": "needle_mae", "heldout": float(errs[2]), "best": best,
                   "stale": stale, "seed": seed, "augment": policy.enabled, "mask_source": mask_source}
        _save(out / "read_last.pt", payload)
        if improved:
            shutil.copyfile(out / "read_last.pt", out / "read_best.pt")
        if stale >= config.patience:
            break
    return TrainResult(out / "read_best.pt", out / "read_last.pt", mlog.path, history)


def evaluate_read(model: ReadNet, data_dir, split: str = "val", mask_source: str = "predicted",
                  seg_model: SegNet | None = None) -> np.ndarray:
    """Per-landmark circular MAE of ``model`` on one split."""
    load_size = seg_model.config.input_size if seg_model is not None else model.config.input_size
    data = load_split(data_dir, split, load_size)
    inputs = build_read_inputs(data, model.config.input_size, mask_source, seg_model)
    return angle_errors(read_predict(model, inputs), data.labels)
