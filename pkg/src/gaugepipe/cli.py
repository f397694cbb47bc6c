"""``gaugepipe`` command line: generate, train, infer, eval.

Hyperparameters come from the ``--config`` YAML file; flags only choose
inputs, outputs and the ablation switches. Success prints a JSON result on
stdout; failure prints a JSON error record on stderr and exits nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import cv2

from .angles import GaugeError, GaugeRange
from .augment import AugmentPolicy
from .config import ConfigError, RunConfig, load_config
from .evalkit import iou_report, join_records, read_predictions_csv, read_truth_jsonl, report
from .pipeline import ImageDecodeError, draw_overlay, read_gauge, read_video, write_predictions_csv
from .synth import MANIFEST, generate_dataset, read_manifest
from .training import CheckpointError, load_checkpoint, train_read, train_seg

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".webm"}

EXIT_USAGE = 2
EXIT_FAILURE = 1


class StageMismatchError(ValueError):
    pass


def cmd_generate(cfg: RunConfig, out_dir, overwrite: bool = False) -> Path:
    s = cfg.synth
    generate_dataset(s.count, cfg.seed, s.canvas, out_dir, val_fraction=s.val_fraction,
                     ranges=s.ranges, overwrite=overwrite, workers=s.workers)
    return Path(out_dir) / MANIFEST


def cmd_train(cfg: RunConfig, stage: str, data_dir, out_dir, seg_checkpoint=None,
              no_seg: bool = False, no_aug: bool = False, resume=None) -> Path:
    read_manifest(data_dir)  # fail early on a missing dataset
    policy = AugmentPolicy.disabled() if no_aug else cfg.augment
    if stage == "seg":
        if no_seg or seg_checkpoint:
            raise StageMismatchError("--no-seg/--seg-model only apply to the read stage")
        return train_seg(data_dir, cfg.seg_train, out_dir, policy, cfg.seed, resume).checkpoint
    if stage != "read":
        raise StageMismatchError(f"unknown stage {stage!r}")
    mask_source = "none" if no_seg else cfg.train.mask_source
    seg_model = None
    if mask_source == "predicted":
        if seg_checkpoint is None:
            raise StageMismatchError("read training with predicted masks needs --seg-model")
        seg_model, _ = load_checkpoint(seg_checkpoint, "seg")
    return train_read(data_dir, cfg.read_train, out_dir, seg_model, mask_source, policy,
                      cfg.seed, resume).checkpoint


def _inputs(path: Path) -> list[tuple[str, Path]]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise FileNotFoundError(f"no images in {path}")
        return [(p.stem, p) for p in files]
    if not path.exists():
        raise FileNotFoundError(f"input not found: {path}")
    return [(path.stem, path)]


def cmd_infer(cfg: RunConfig, seg_checkpoint, read_checkpoint, input_path, out_csv,
              no_seg: bool = False, no_crop: bool = False, overlay_dir=None,
              gauge_range: GaugeRange | None = None) -> Path:
    use_seg = cfg.pipeline.use_seg and not no_seg
    options = {"use_crop": cfg.pipeline.use_crop and not no_crop, "use_seg": use_seg,
               "low_confidence": cfg.pipeline.low_confidence}
    read_model, _ = load_checkpoint(read_checkpoint, "read")
    seg_model = None
    if use_seg:
        if seg_checkpoint is None:
            raise StageMismatchError("inference with segmentation needs --seg-model (or pass --no-seg)")
        seg_model, _ = load_checkpoint(seg_checkpoint, "seg")

    input_path = Path(input_path)
    error = None
    if input_path.suffix.lower() in VIDEO_SUFFIXES:
        video = read_video(input_path, seg_model, read_model, gauge_range, **options)
        results, ids, error = video.results, video.frame_ids, video.error
        sources = None
    else:
        items = _inputs(input_path)
        ids = [sid for sid, _ in items]
        sources = [p for _, p in items]
        results = [read_gauge(p, seg_model, read_model, gauge_range, **options) for p in sources]
    out_csv = write_predictions_csv(out_csv, results, ids)
    if overlay_dir is not None:
        odir = Path(overlay_dir)
        odir.mkdir(parents=True, exist_ok=True)
        if sources is None:
            frames = iter(_video_frames(input_path))
            sources = [next(frames) for _ in results]
        for sid, src, res in zip(ids, sources, results):
            img = draw_overlay(src, res)
            cv2.imwrite(str(odir / f"{sid}.png"), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    if error is not None:
        raise ImageDecodeError(f"{error['message']} (after {error['frame']} frames; partial CSV at {out_csv})")
    return out_csv


def _video_frames(path):
    cap = cv2.VideoCapture(str(path))
    try:
        while True:
            ok, bgr = cap.read()
            if not ok:
                return
            yield cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    finally:
        cap.release()


def cmd_eval(cfg: RunConfig, predictions=None, truth=None, out_dir=None, masks_dir=None):
    e = cfg.eval
    predictions = Path(predictions or e.predictions)
    truth = Path(truth or e.truth)
    for p in (predictions, truth):
        if not p.is_file():
            raise FileNotFoundError(f"not found: {p}")
    truths = read_truth_jsonl(truth, correct_explement=e.correct_explement)
    records = join_records(read_predictions_csv(predictions), truths)
    pairs = None
    if masks_dir is not None:
        truth_root = truth.parent
        pairs = []
        for r in records:
            pred = cv2.imread(str(Path(masks_dir) / f"{r.sample_id}.png"), cv2.IMREAD_UNCHANGED)
            gt = cv2.imread(str(truth_root / "masks" / f"{r.sample_id}.png"), cv2.IMREAD_UNCHANGED)
            if pred is None or gt is None:
                raise FileNotFoundError(f"mask pair missing for sample {r.sample_id}")
            pairs.append((pred, gt))
        iou_report(pairs)  # validate shapes before writing anything
    return report(records, pairs, out_dir or e.out_dir)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gaugepipe", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="YAML run configuration (defaults if omitted)")

    p = sub.add_parser("generate", help="render a synthetic dataset")
    common(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("train", help="train the segmentation or reading network")
    common(p)
    p.add_argument("--stage", choices=("seg", "read"), required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seg-model", type=Path, help="segmentation checkpoint (read stage)")
    p.add_argument("--no-seg", action="store_true", help="all-background mask channel")
    p.add_argument("--no-aug", action="store_true", help="disable training augmentation")
    p.add_argument("--resume", type=Path)

    p = sub.add_parser("infer", help="read gauges in an image, directory or video")
    common(p)
    p.add_argument("--seg-model", type=Path)
    p.add_argument("--read-model", type=Path, required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="predictions CSV")
    p.add_argument("--no-seg", action="store_true")
    p.add_argument("--no-crop", action="store_true")
    p.add_argument("--overlay", type=Path, metavar="DIR", help="write landmark overlays here")
    p.add_argument("--range", dest="gauge_range", metavar="MIN,MAX[,UNIT]")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--predictions", type=Path)
    p.add_argument("--truth", type=Path, help="truth JSONL or dataset manifest.jsonl")
    p.add_argument("--out", type=Path)
    p.add_argument("--masks", type=Path, help="predicted masks (PNG per sample id) for IoU")
    return ap


def run(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    if args.command == "generate":
        return {"manifest": str(cmd_generate(cfg, args.out, args.overwrite))}
    if args.command == "train":
        ckpt = cmd_train(cfg, args.stage, args.data, args.out, args.seg_model, args.no_seg,
                         args.no_aug, args.resume)
        return {"checkpoint": str(ckpt)}
    if args.command == "infer":
        rng = GaugeRange.parse(args.gauge_range) if args.gauge_range else None
        out = cmd_infer(cfg, args.seg_model, args.read_model, args.input, args.out,
                        args.no_seg, args.no_crop, args.overlay, rng)
        return {"predictions": str(out)}
    rep = cmd_eval(cfg, args.predictions, args.truth, args.out, args.masks)
    return {"files": [str(f) for f in rep.files], "table": rep.table}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except (ConfigError, StageMismatchError) as exc:
        _fail(exc, EXIT_USAGE)
        return EXIT_USAGE
    except (FileNotFoundError, FileExistsError, CheckpointError, ImageDecodeError,
            GaugeError, KeyError, ValueError) as exc:
        _fail(exc, EXIT_FAILURE)
        return EXIT_FAILURE
    print(json.dumps({"ok": True, "command": args.command, **result}, default=_jsonable))
    return 0


def _jsonable(value):
    if dataclasses.is_dataclass(value):
        return dataclasses.asdict(value)
    return str(value)


def _fail(exc: Exception, code: int):
    record = {"ok": False, "error": type(exc).__name__, "message": str(exc).strip("'\""),
              "exit_code": code}
    print(json.dumps(record), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
