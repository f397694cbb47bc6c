import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaugepipe.angles import AngleTriple, point_at
from gaugepipe.augment import AugmentPolicy, augment_read, augment_seg, cutout_boxes, rotate_sample
from gaugepipe.synth import NEEDLE, random_spec, render
from oracles import circ_diff

# photometric ops at their identity settings
NEUTRAL = dict(contrast_range=(1.0, 1.0), brightness_range=(0.0, 0.0), saturation_range=(1.0, 1.0),
               max_rotation=0.0, blur_sigma_range=(0.0, 0.0))


@pytest.fixture(scope="module")
def sample():
    return render(random_spec(21))


def read_input(seed=0, size=64):
    rng = np.random.default_rng(seed)
    x = np.empty((size, size, 4), np.float32)
    x[..., :3] = rng.uniform(0, 1, (size, size, 3))
    x[..., 3] = rng.choice([0.0, 0.5, 1.0], (size, size))
    return x


def test_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(contrast_range=(1.5, 0.5))
    with pytest.raises(ValueError):
        AugmentPolicy(max_rotation=25.0)
    with pytest.raises(ValueError):
        AugmentPolicy(cutout_count=(-1, 2))
    assert AugmentPolicy.disabled().enabled is False


def test_disabled_policy_is_identity(sample):
    out = augment_seg(sample, AugmentPolicy.disabled(), seed=3)
    assert np.array_equal(out.image, sample.image) and np.array_equal(out.mask, sample.mask)
    assert out.truth == sample.truth
    x = read_input()
    y, labels = augment_read(x, AngleTriple(1, 2, 3), AugmentPolicy.disabled(), seed=3)
    assert np.array_equal(x, y) and labels == AngleTriple(1, 2, 3)


def test_rotation_by_ten_shifts_every_angle(sample):
    out = rotate_sample(sample, 10.0)
    t0, t1 = sample.truth, out.truth
    for a, b in ((t0.start, t1.start), (t0.end, t1.end), (t0.needle, t1.needle)):
        assert circ_diff(b, a + 10.0) < 1e-9
    # labels still point at the rotated needle
    p = point_at(t1.center_px, t1.needle, 0.9 * t1.radius_px)
    needle = cv2.dilate((out.mask == NEEDLE).astype(np.uint8), np.ones((5, 5), np.uint8))
    assert needle[int(round(p.y)), int(round(p.x))]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augment_seg_rotates_labels_rigidly(seed):
    s = render(random_spec(5))
    out = augment_seg(s, AugmentPolicy(), seed)
    shifts = [(b - a) % 360.0 for a, b in ((s.truth.start, out.truth.start), (s.truth.end, out.truth.end),
                                           (s.truth.needle, out.truth.needle))]
    delta = ((shifts[0] + 180.0) % 360.0) - 180.0
    assert abs(delta) <= 20.0 + 1e-9
    assert max(circ_diff(shifts, shifts[0])) < 1e-9
    assert set(np.unique(out.mask)) <= {0, 1, 2}
    assert out.image.shape == s.image.shape and out.image.dtype == np.uint8


def test_cutout_three_squares_image_only(sample):
    white = type(sample)(np.full_like(sample.image, 255), sample.mask.copy(), sample.truth)
    policy = AugmentPolicy(cutout_count=(3, 3), **NEUTRAL)
    out = augment_seg(white, policy, seed=12)
    zero = np.all(out.image == 0, axis=2).astype(np.uint8)
    n, labels, stats, _ = cv2.connectedComponentsWithStats(zero, connectivity=4)
    assert n - 1 == 3
    for x, y, w, h, area in stats[1:]:
        assert w == h and area == w * h
    assert np.array_equal(out.mask, sample.mask)
    assert np.all(out.image[zero == 0] == 255)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_cutout_boxes_fit(seed, count):
    rng = np.random.default_rng(seed)
    boxes = cutout_boxes(rng, (96, 128), (count, count), (0.05, 0.10))
    assert len(boxes) == count
    for x, y, side in boxes:
        assert 0 <= x and x + side <= 128 and 0 <= y and y + side <= 96
        assert round(0.05 * 96) <= side <= round(0.10 * 96)


def test_augment_seg_is_seeded(sample):
    a = augment_seg(sample, AugmentPolicy(), seed=99)
    b = augment_seg(sample, AugmentPolicy(), seed=99)
    c = augment_seg(sample, AugmentPolicy(), seed=100)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask) and a.truth == b.truth
    assert not np.array_equal(a.image, c.image)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_augment_read_contract(seed):
    x = read_input(seed % 1000)
    labels = AngleTriple(120.5, 45.5, 300.5)
    y, out_labels = augment_read(x, labels, AugmentPolicy(), seed)
    assert out_labels == labels
    assert y.shape == x.shape
    assert set(np.unique(y[..., 3])) <= {0.0, 0.5, 1.0}
    assert np.all((y[..., :3] >= 0) & (y[..., :3] <= 1))
    y2, _ = augment_read(x, labels, AugmentPolicy(), seed)
    assert np.array_equal(y, y2)


def test_augment_read_photometrics_skip_mask_channel():
    x = read_input(1)
    policy = AugmentPolicy(contrast_range=(1.4, 1.4), brightness_range=(0.2, 0.2),
                           saturation_range=(0.5, 0.5), blur_sigma_range=(0.0, 0.0), cutout_count=(0, 0))
    y, _ = augment_read(x, None, policy, seed=0)
    assert np.array_equal(y[..., 3], x[..., 3])
    assert not np.allclose(y[..., :3], x[..., :3])


def test_augment_read_cutout_hits_all_channels():
    x = read_input(2)
    x[..., 3] = 1.0
    policy = AugmentPolicy(cutout_count=(2, 2), **NEUTRAL)
    y, _ = augment_read(x, None, policy, seed=4)
    holes = np.all(y == 0.0, axis=2)
    assert holes.any()
    assert np.array_equal(holes, y[..., 3] == 0.0)


def test_augment_read_rejects_wrong_channels():
    with pytest.raises(ValueError):
        augment_read(np.zeros((8, 8, 3), np.float32), None, AugmentPolicy(), 0)
