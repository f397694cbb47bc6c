import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gaugepipe.augment import AugmentPolicy  # noqa: E402
from gaugepipe.config import RunConfig  # noqa: E402
from gaugepipe.synth import MANIFEST, SynthRanges, generate_dataset  # noqa: E402
from gaugepipe.training import load_checkpoint, read_metrics, train_read, train_seg  # noqa: E402

TOY_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "toy.yaml"
# set to a directory to keep the toy runs between pytest sessions
TOY_DIR_ENV = "GAUGEPIPE_TOY_DIR"

ACCEPTANCE_LINES: dict[int, str] = {}


@dataclass
class ToyRuns:
    cfg: RunConfig
    data: Path          # 500 train / 100 held-out
    field: Path         # 100 held-out samples under field_conditions photometrics
    seg: object         # augmented
    seg_noaug: object
    read: object        # predicted masks, augmented
    read_noseg: object  # all-background mask channel, augmented
    read_noaug: object  # predicted masks from seg_noaug, no augmentation
    seconds: float      # wall time of the main seg + read training


def _trained(out: Path, kind: str, train):
    """Reuse a finished run found in ``out`` or train a new one."""
    best = out / f"{kind}_best.pt"
    metrics = out / f"{kind}_metrics.csv"
    t0 = time.perf_counter()
    if best.exists() and metrics.exists():
        seconds = float((out / "seconds.txt").read_text()) if (out / "seconds.txt").exists() else 0.0
    else:
        train()
        seconds = time.perf_counter() - t0
        (out / "seconds.txt").write_text(str(seconds))
    model, _ = load_checkpoint(best, kind)
    return model, read_metrics(metrics), seconds


@pytest.fixture(scope="session")
def toy(tmp_path_factory) -> ToyRuns:
    root = Path(os.environ[TOY_DIR_ENV]) if os.environ.get(TOY_DIR_ENV) else tmp_path_factory.mktemp("toy")
    root.mkdir(parents=True, exist_ok=True)
    cfg = RunConfig.loads(TOY_CONFIG.read_text())
    s = cfg.synth
    data, field = root / "data", root / "field"
    if not (data / MANIFEST).exists():
        generate_dataset(s.count, cfg.seed, s.canvas, data, val_fraction=s.val_fraction, ranges=s.ranges,
                         overwrite=True)
    if not (field / MANIFEST).exists():
        generate_dataset(100, cfg.seed + 1, s.canvas, field, val_fraction=1.0,
                         ranges=SynthRanges.field_conditions(), overwrite=True)

    aug, noaug = cfg.augment, AugmentPolicy.disabled()
    seg, _, t_seg = _trained(root / "seg", "seg", lambda: train_seg(
        data, cfg.seg_train, root / "seg", policy=aug, seed=cfg.seed))
    seg_noaug, _, _ = _trained(root / "seg_noaug", "seg", lambda: train_seg(
        data, cfg.seg_train, root / "seg_noaug", policy=noaug, seed=cfg.seed))
    read, _, t_read = _trained(root / "read", "read", lambda: train_read(
        data, cfg.read_train, root / "read", seg, "predicted", aug, seed=cfg.seed))
    read_noseg, _, _ = _trained(root / "read_noseg", "read", lambda: train_read(
        data, cfg.read_train, root / "read_noseg", None, "none", aug, seed=cfg.seed))
    read_noaug, _, _ = _trained(root / "read_noaug", "read", lambda: train_read(
        data, cfg.read_train, root / "read_noaug", seg_noaug, "predicted", noaug, seed=cfg.seed))
    return ToyRuns(cfg, data, field, seg, seg_noaug, read, read_noseg, read_noaug, t_seg + t_read)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
