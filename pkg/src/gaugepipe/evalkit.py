"""Benchmark metrics: circular MAE tables, per-class IoU, the field tolerance rule."""
from __future__ import annotations

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .angles import AngleTriple, GaugeError, GaugeRange, circular_abs_error, clockwise_between, keypoint_angle, wrap360

LANDMARKS = ("start", "end", "needle")
NUM_CLASSES = 3
HIST_EDGES = np.linspace(0.0, 1.0, 21)  # 5% wide IoU bins


class MissingKeypointsError(GaugeError):
    pass


@dataclass(frozen=True)
class EvalRecord:
    sample_id: str
    pred: AngleTriple
    truth: AngleTriple
    scenario: str = "default"
    frame: int | None = None


def _check_landmark(landmark: str):
    if landmark not in LANDMARKS:
        raise ValueError(f"landmark must be one of {LANDMARKS}, got {landmark!r}")


def mae(records: Sequence[EvalRecord], landmark: str = "needle") -> float:
    """Mean circular absolute error (degrees) of one landmark over ``records``."""
    _check_landmark(landmark)
    if not records:
        raise ValueError("mae of an empty record list")
    pred = [getattr(r.pred, landmark) for r in records]
    truth = [getattr(r.truth, landmark) for r in records]
    return float(np.mean(circular_abs_error(pred, truth)))


def macro_average(values: Iterable[float]) -> float:
    """Unweighted mean of per-group errors, as in the summary rows of MAE tables."""
    vals = list(values)
    if not vals:
        raise ValueError("nothing to average")
    return float(np.mean(vals))


def group_records(records: Iterable[EvalRecord]) -> "OrderedDict[str, list[EvalRecord]]":
    groups: OrderedDict[str, list[EvalRecord]] = OrderedDict()
    for r in records:
        groups.setdefault(r.scenario, []).append(r)
    return groups


# --------------------------------------------------------------------------
# segmentation


def _class_counts(pred_mask, truth_mask):
    pred = np.asarray(pred_mask)
    truth = np.asarray(truth_mask)
    if pred.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    inter = np.array([np.count_nonzero((pred == c) & (truth == c)) for c in range(NUM_CLASSES)])
    union = np.array([np.count_nonzero((pred == c) | (truth == c)) for c in range(NUM_CLASSES)])
    return inter, union


def class_iou(pred_mask, truth_mask) -> np.ndarray:
    """Per-class IoU; a class absent from both masks scores 1.0."""
    inter, union = _class_counts(pred_mask, truth_mask)
    return np.where(union > 0, inter / np.maximum(union, 1), 1.0)


@dataclass
class IoUReport:
    per_class_iou: np.ndarray  # mean over images where the class occurs in either mask
    per_image_iou: list[np.ndarray]
    histogram: np.ndarray  # (20, 3) image counts per 5% IoU bin
    bin_edges: np.ndarray = field(default_factory=lambda: HIST_EDGES.copy())

    def to_dict(self) -> dict:
        return {"per_class_iou": self.per_class_iou.tolist(),
                "per_image_iou": [v.tolist() for v in self.per_image_iou],
                "histogram": self.histogram.tolist(), "bin_edges": self.bin_edges.tolist()}


def iou_report(pairs: Iterable[tuple[np.ndarray, np.ndarray]]) -> IoUReport:
    """Summarize ``(pred_mask, truth_mask)`` pairs."""
    per_image, present = [], []
    for pred, truth in pairs:
        inter, union = _class_counts(pred, truth)
        per_image.append(np.where(union > 0, inter / np.maximum(union, 1), 1.0))
        present.append(union > 0)
    if not per_image:
        raise ValueError("no mask pairs")
    ious, present = np.array(per_image), np.array(present)
    means = np.array([ious[present[:, c], c].mean() if present[:, c].any() else np.nan
                      for c in range(NUM_CLASSES)])
    hist = np.stack([np.histogram(ious[present[:, c], c], HIST_EDGES)[0]
                     for c in range(NUM_CLASSES)], axis=1)
    return IoUReport(means, per_image, hist)


# --------------------------------------------------------------------------
# field criteria and label fixes


def tolerance_pass(pred_reading: float, truth_reading: float, gauge_range: GaugeRange,
                   tick_value: float) -> bool:
    """Field acceptance: error within 2% of the range or two tick intervals, whichever is larger."""
    if not isinstance(gauge_range, GaugeRange):
        gauge_range = GaugeRange(*gauge_range)
    if not tick_value > 0:
        raise GaugeError(f"tick_value must be positive, got {tick_value}")
    allowed = max(0.02 * gauge_range.span, 2.0 * tick_value)
    return abs(pred_reading - truth_reading) <= allowed


def correct_explement_labels(labels: Sequence[float], keypoints: Sequence) -> list[float]:
    """Undo shortest-angle labelling of start->needle spans.

    ``keypoints[i]`` is ``(center, start, tip)`` for ``labels[i]``. When the
    keypoints say the clockwise span exceeds 180 deg but the stored label is
    the short way round (<= 180), the label is replaced by its explement.
    Applying the correction twice changes nothing.
    """
    if len(labels) != len(keypoints):
        raise MissingKeypointsError(f"{len(labels)} labels but {len(keypoints)} keypoint triples")
    out = []
    for i, (label, kp) in enumerate(zip(labels, keypoints)):
        if kp is None:
            raise MissingKeypointsError(f"no keypoints for label {i}")
        center, start, tip = kp
        span = keypoint_angle(center, start, tip)
        label = float(label)
        out.append(wrap360(360.0 - label) if span > 180.0 and label <= 180.0 else label)
    return out


# --------------------------------------------------------------------------
# report bundle


@dataclass
class EvalReport:
    table: list[dict]
    text: str
    iou: IoUReport | None
    plots: dict[str, list[dict]]
    files: list[Path] = field(default_factory=list)


def mae_table(records: Sequence[EvalRecord]) -> list[dict]:
    """One row per scenario plus a macro-averaged ``Average`` row."""
    if not records:
        raise ValueError("no records to report")
    rows = []
    for name, recs in group_records(records).items():
        row = {"scenario": name, "n": len(recs)}
        row.update({f"{lm}_mae": mae(recs, lm) for lm in LANDMARKS})
        rows.append(row)
    avg = {"scenario": "Average", "n": sum(r["n"] for r in rows)}
    avg.update({f"{lm}_mae": macro_average(r[f"{lm}_mae"] for r in rows) for lm in LANDMARKS})
    rows.append(avg)
    return rows


def render_table(rows: Sequence[dict]) -> str:
    cols = ["scenario", "n"] + [f"{lm}_mae" for lm in LANDMARKS]
    width = max(len("scenario"), *(len(str(r["scenario"])) for r in rows))
    lines = [f"{'scenario':<{width}}  {'n':>6}  {'start':>7}  {'end':>7}  {'needle':>7}"]
    lines.append("-" * len(lines[0]))
    for r in rows:
        if r["scenario"] == "Average":
            lines.append("-" * len(lines[0]))
        lines.append(f"{r['scenario']:<{width}}  {r['n']:>6d}  " +
                     "  ".join(f"{r[c]:>7.2f}" for c in cols[2:]))
    return "\n".join(lines)


def plot_series(records: Sequence[EvalRecord]) -> dict[str, list[dict]]:
    """Per-video (scenario) series of predicted vs true needle angle."""
    series = {}
    for name, recs in group_records(records).items():
        ordered = sorted(enumerate(recs), key=lambda ir: (ir[1].frame if ir[1].frame is not None else ir[0]))
        series[name] = [{"frame": r.frame if r.frame is not None else i, "sample_id": r.sample_id,
                         "pred_needle_deg": r.pred.needle, "truth_needle_deg": r.truth.needle}
                        for i, r in ordered]
    return series


def _write_csv(path: Path, rows: Sequence[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


def report(records: Sequence[EvalRecord], masks: Iterable[tuple[np.ndarray, np.ndarray]] | None = None,
           out_dir=None) -> EvalReport:
    """Build (and optionally write) the MAE table, IoU summary and plot series."""
    rows = mae_table(records)
    text = render_table(rows)
    iou = iou_report(masks) if masks is not None else None
    if iou is not None:
        text += "\n\nIoU  background {:.4f}  case {:.4f}  needle {:.4f}".format(*iou.per_class_iou)
    plots = plot_series(records)
    rep = EvalReport(rows, text, iou, plots)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rep.files.append(_write_csv(out / "mae_table.csv", rows))
        (out / "mae_table.txt").write_text(text + "\n")
        rep.files.append(out / "mae_table.txt")
        if iou is not None:
            (out / "iou.json").write_text(json.dumps(iou.to_dict(), indent=1))
            rep.files.append(out / "iou.json")
        for name, series in plots.items():
            safe = "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)
            rep.files.append(_write_csv(out / f"plot_{safe}.csv", series))
    return rep


# --------------------------------------------------------------------------
# file ingestion


def read_truth_jsonl(path, correct_explement: bool = False) -> dict[str, dict]:
    """Ground truth keyed by sample id (a dataset ``manifest.jsonl`` also works).

    With ``correct_explement`` the start->needle span of records carrying
    ``keypoints`` ({"center", "start", "tip"} as [x, y]) is fixed with
    :func:`correct_explement_labels`.
    """
    truths = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "sample_id" not in rec and "id" in rec:  # dataset manifests key samples by "id"
                rec["sample_id"] = rec["id"]
            missing = {"sample_id", "start_deg", "end_deg", "needle_deg"} - rec.keys()
            if missing:
                raise ValueError(f"truth record lacks {sorted(missing)}: {rec}")
            if correct_explement:
                kp = rec.get("keypoints")
                if kp is None:
                    raise MissingKeypointsError(f"sample {rec['sample_id']} has no keypoints")
                span = clockwise_between(rec["start_deg"], rec["needle_deg"])
                fixed = correct_explement_labels([span], [(kp["center"], kp["start"], kp["tip"])])[0]
                rec["needle_deg"] = wrap360(rec["start_deg"] + fixed)
            truths[str(rec["sample_id"])] = rec
    return truths


def read_predictions_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def join_records(predictions: Sequence[dict], truths: dict[str, dict]) -> list[EvalRecord]:
    """Pair prediction rows (``frame_id``) with ground truth (``sample_id``)."""
    records = []
    for i, row in enumerate(predictions):
        sid = str(row["frame_id"])
        if sid not in truths:
            raise KeyError(f"no ground truth for prediction {sid!r}")
        t = truths[sid]
        pred = AngleTriple(float(row["start_deg"]), float(row["end_deg"]), float(row["needle_deg"]))
        truth = AngleTriple(t["start_deg"], t["end_deg"], t["needle_deg"])
        frame = t.get("frame", row.get("frame"))
        records.append(EvalRecord(sid, pred, truth, str(t.get("scenario", "default")),
                                  int(frame) if frame not in (None, "") else i))
    return records
