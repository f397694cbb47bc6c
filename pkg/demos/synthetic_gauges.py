"""
Synthetic gauges and their labels
=================================

Each sample is drawn from a seed: geometry, perspective, lighting and noise.
The labels (three angles and a three-class mask) are measured after the
perspective warp, so they describe the image as it appears.

Usage: python3 demos/synthetic_gauges.py [out_dir]
"""

import sys
from pathlib import Path

import cv2
import numpy as np

from gaugepipe.synth import SynthRanges, random_spec, render, sample_seed

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# one row of ordinary renders, one row under the harsher field conditions
rows = []
for ranges in (SynthRanges(), SynthRanges.field_conditions()):
    tiles = []
    for i in range(6):
        s = render(random_spec(sample_seed(7, i), (160, 160), ranges))
        t = s.truth
        print(f"sample {i}: start {t.start:6.1f}  end {t.end:6.1f}  needle {t.needle:6.1f}  "
              f"radius {t.radius_px:5.1f}px")
        # the mask is shown as gray levels under the image: background, case, needle
        mask = cv2.cvtColor((s.mask * 120).astype(np.uint8), cv2.COLOR_GRAY2RGB)
        tiles.append(np.vstack([s.image, mask]))
    rows.append(np.hstack(tiles))

sheet = np.vstack(rows)
cv2.imwrite(str(out / "contact_sheet.png"), cv2.cvtColor(sheet, cv2.COLOR_RGB2BGR))
print("wrote", out / "contact_sheet.png")
