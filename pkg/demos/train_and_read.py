"""
From rendered data to a reading
===============================

A deliberately short run: 200 samples at 128 px and a handful of epochs, so
it finishes in a couple of minutes on a CPU. The numbers are far from what
configs/toy.yaml reaches; the point is the sequence of calls.

Usage: python3 demos/train_and_read.py [work_dir]
"""

import sys
from pathlib import Path

from gaugepipe.angles import GaugeRange
from gaugepipe.augment import AugmentPolicy
from gaugepipe.models import ReadModelConfig, SegModelConfig
from gaugepipe.pipeline import read_gauge
from gaugepipe.synth import generate_dataset, random_spec, render
from gaugepipe.training import evaluate_read, train_read, train_seg

work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_run")

# 1. render a dataset: images/, masks/ and a JSON-lines manifest with the angles
generate_dataset(200, seed=1, canvas=(128, 128), out_dir=work / "data", val_fraction=0.2, overwrite=True)

# 2. segmentation first: background, case and needle
seg_cfg = SegModelConfig(backbone_scale="tiny", input_size=128, epochs=4, batch_size=16, lr_step=3)
seg = train_seg(work / "data", seg_cfg, work / "seg", policy=AugmentPolicy(), seed=0)
print("segmentation mIoU per epoch:", [round(r["heldout"], 3) for r in seg.history])

# 3. the reading net sees RGB plus the predicted mask as a fourth channel
from gaugepipe.training import load_checkpoint  # noqa: E402

seg_model, _ = load_checkpoint(seg.checkpoint, "seg")
read_cfg = ReadModelConfig(backbone_scale="tiny", input_size=128, epochs=8, batch_size=16, lr_step=6)
read = train_read(work / "data", read_cfg, work / "read", seg_model, "predicted", AugmentPolicy(), seed=0)
read_model, _ = load_checkpoint(read.checkpoint, "read")
print("held-out MAE (start, end, needle):", evaluate_read(read_model, work / "data", "val", "predicted", seg_model).round(2))

# 4. read a fresh render; without a crop the input matches what the nets saw in training
sample = render(random_spec(12345, (128, 128)))
res = read_gauge(sample.image, seg_model, read_model, GaugeRange(0, 16, "bar"), use_crop=False)
t = sample.truth
print(f"truth needle {t.needle:6.1f}  predicted {res.angles.needle:6.1f}")
print(f"reading {res.reading:.2f} {res.unit}  flags: {res.flag_string() or 'none'}")
