import json
from dataclasses import replace

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugepipe.angles import Point2, clockwise_between, point_at
from gaugepipe.synth import (
    BACKGROUND,
    CASE,
    MANIFEST,
    NEEDLE,
    LightSpec,
    NoiseSpec,
    RenderError,
    _fits,
    fill_mask,
    gauge_geometry,
    generate_dataset,
    random_spec,
    read_manifest,
    render,
    sample_seed,
)
from oracles import circ_diff, oracle_truth, probe_hits_needle

_DILATE3 = cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (7, 7))


def test_random_spec_is_deterministic():
    assert random_spec(42) == random_spec(42)
    assert random_spec(42, (160, 200)) == random_spec(42, (160, 200))


def test_random_spec_seeds_differ():
    a, b = random_spec(0), random_spec(1)
    assert a != b
    assert a.needle_angle != b.needle_angle


def test_random_spec_rejects_small_canvas():
    with pytest.raises(ValueError):
        random_spec(0, (127, 256))


def test_twelve_thousand_distinct_specs():
    specs = [random_spec(sample_seed(0, i)) for i in range(12000)]
    assert len(specs) == 12000
    assert len({(s.needle_angle, s.start_angle, s.face_radius) for s in specs}) == 12000


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(128, 300), st.integers(128, 300))
def test_random_spec_invariants(seed, h, w):
    spec = random_spec(seed, (h, w))
    assert _fits(spec)
    assert clockwise_between(spec.start_angle, spec.needle_angle) <= spec.sweep + 1e-9
    assert -45 <= spec.yaw <= 45 and -30 <= spec.pitch <= 30
    assert 0.3 <= spec.light.brightness_scale <= 1.7


def test_spec_validation():
    base = random_spec(5)
    with pytest.raises(ValueError):
        replace(base, tick_count=1)
    with pytest.raises(ValueError):
        replace(base, yaw=50.0)
    with pytest.raises(ValueError):
        replace(base, needle_style="wavy")
    with pytest.raises(ValueError):
        # just past the end marker
        replace(base, needle_angle=(base.end_angle + 5.0) % 360.0)
    with pytest.raises(ValueError):
        LightSpec(brightness_scale=2.0)
    with pytest.raises(ValueError):
        LightSpec(shadow_opacity=1.5)
    with pytest.raises(ValueError):
        NoiseSpec(blur_sigma=-1.0)


def test_render_rejects_gauge_leaving_canvas():
    spec = replace(random_spec(3), face_radius=200.0)
    with pytest.raises(RenderError):
        render(spec)


def test_render_is_bitwise_reproducible():
    spec = random_spec(11)
    a, b = render(spec), render(spec)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.mask.tobytes() == b.mask.tobytes()
    assert a.truth == b.truth


def test_identity_warp_keeps_spec_angles():
    for seed in range(20):
        spec = replace(random_spec(seed), yaw=0.0, pitch=0.0)
        t = render(spec).truth
        assert circ_diff(t.needle, spec.needle_angle) < 1e-6
        assert circ_diff(t.start, spec.start_angle) < 1e-6
        assert circ_diff(t.end, spec.end_angle) < 1e-6
        assert t.center_px.x == pytest.approx(spec.center.x)
        assert t.radius_px == pytest.approx(spec.face_radius, rel=1e-3)


def test_truth_matches_independent_projection():
    worst = 0.0
    for seed in range(60):
        spec = random_spec(sample_seed(3, seed))
        truth = gauge_geometry(spec).truth
        expected, center = oracle_truth(spec)
        assert truth.center_px.x == pytest.approx(center[0], abs=1e-6)
        assert truth.center_px.y == pytest.approx(center[1], abs=1e-6)
        got = [truth.start, truth.end, truth.needle]
        worst = max(worst, float(np.max(circ_diff(got, expected))))
    assert worst < 1e-4


def test_warp_changes_angles():
    # perspective does not preserve angles, so copying the spec values would be wrong
    spec = replace(random_spec(8), yaw=25.0, pitch=-20.0)
    t = gauge_geometry(spec).truth
    assert max(circ_diff(t.needle, spec.needle_angle), circ_diff(t.start, spec.start_angle)) > 0.5


def test_mask_structure():
    for seed in range(40):
        s = render(random_spec(sample_seed(1, seed)))
        assert s.image.shape[:2] == s.mask.shape
        assert s.image.dtype == np.uint8 and s.image.shape[2] == 3
        assert set(np.unique(s.mask)) == {BACKGROUND, CASE, NEEDLE}


def test_probe_inside_needle_for_every_sample():
    misses = [i for i in range(150) if not probe_hits_needle(render(random_spec(sample_seed(2, i))))]
    assert misses == []


def test_markers_lie_on_truth_rays():
    for i in range(60):
        spec = random_spec(sample_seed(4, i))
        geom = gauge_geometry(spec)
        marks = cv2.dilate(fill_mask(spec.canvas, geom.markers + geom.ticks), _DILATE3)
        t = geom.truth
        for ang in (t.start, t.end):
            hits = 0
            for d in np.arange(0.5, 1.0, 0.02) * t.radius_px:
                p = point_at(t.center_px, ang, d)
                hits += int(marks[int(round(p.y)), int(round(p.x))])
            assert hits > 0, (i, ang)


def test_photometrics_never_touch_mask():
    for seed in range(25):
        spec = random_spec(sample_seed(5, seed))
        plain = spec.without_photometrics()
        assert plain.light == LightSpec() and plain.noise == NoiseSpec()
        a, b = render(spec), render(plain)
        assert np.array_equal(a.mask, b.mask)
        assert a.truth == b.truth


def test_needle_is_rarest_class():
    counts = np.zeros(3)
    for i in range(500):
        counts += np.bincount(render(random_spec(sample_seed(6, i))).mask.ravel(), minlength=3)
    share = counts / counts.sum()
    assert share[NEEDLE] < 0.05
    assert share[NEEDLE] == share.min()


def test_shadow_and_dust_change_pixels_only():
    spec = random_spec(9)
    dusty = replace(spec, noise=replace(spec.noise, dust_density=30.0),
                    light=replace(spec.light, shadow_enabled=True, shadow_opacity=0.6, shadow_offset=3.0))
    a, b = render(spec), render(dusty)
    assert not np.array_equal(a.image, b.image)
    assert np.array_equal(a.mask, b.mask)


# ---------------------------------------------------------------- datasets


def test_generate_single_sample_round_trip(tmp_path):
    manifest = generate_dataset(1, 7, (128, 128), tmp_path / "d")
    back = read_manifest(tmp_path / "d")
    assert len(back) == 1
    rec = back.records[0]
    s = render(random_spec(sample_seed(7, 0)))
    assert rec.id == manifest.records[0].id
    assert rec.split == "train"
    for got, want in zip(rec.angles.as_tuple(), (s.truth.start, s.truth.end, s.truth.needle)):
        assert got == pytest.approx(want, abs=1e-6)
    assert rec.gauge_range == s.truth.range
    image, mask = back.load(rec)
    assert np.array_equal(image, s.image)
    assert np.array_equal(mask, s.mask)


def test_manifest_layout(tmp_path):
    generate_dataset(10, 1, (128, 128), tmp_path, val_fraction=0.2)
    lines = (tmp_path / MANIFEST).read_text().splitlines()
    assert len(lines) == 10
    recs = [json.loads(line) for line in lines]
    assert set(recs[0]) == {"id", "start_deg", "end_deg", "needle_deg", "min_value", "max_value",
                            "unit", "center_x", "center_y", "radius_px", "split"}
    assert [r["split"] for r in recs] == ["train"] * 8 + ["val"] * 2
    # at least four fractional digits on every angle
    assert all(len(line.split('"needle_deg": ')[1].split(",")[0].split(".")[1]) >= 4 for line in lines)
    for r in recs:
        mask = cv2.imread(str(tmp_path / "masks" / f"{r['id']}.png"), cv2.IMREAD_UNCHANGED)
        assert mask.ndim == 2 and mask.dtype == np.uint8 and mask.max() <= 2


def test_generate_refuses_existing_dataset(tmp_path):
    generate_dataset(2, 0, (128, 128), tmp_path)
    with pytest.raises(FileExistsError):
        generate_dataset(2, 0, (128, 128), tmp_path)
    generate_dataset(3, 0, (128, 128), tmp_path, overwrite=True)
    assert len(read_manifest(tmp_path)) == 3


def test_generate_is_deterministic_and_worker_independent(tmp_path):
    generate_dataset(6, 3, (128, 144), tmp_path / "a")
    generate_dataset(6, 3, (128, 144), tmp_path / "b", workers=2)
    assert (tmp_path / "a" / MANIFEST).read_bytes() == (tmp_path / "b" / MANIFEST).read_bytes()
    for rec in read_manifest(tmp_path / "a").records:
        for kind in ("images", "masks"):
            name = f"{rec.id}.png"
            assert (tmp_path / "a" / kind / name).read_bytes() == (tmp_path / "b" / kind / name).read_bytes()


def test_generate_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(0, 0, (128, 128), tmp_path)


def test_center_point_is_point2():
    t = render(random_spec(0)).truth
    assert isinstance(t.center_px, Point2)
    assert t.radius_px > 0
