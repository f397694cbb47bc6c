"""
Angles, bins and readings
=========================

Image coordinates have y pointing down, so "clockwise" is the direction a
needle travels on screen. Every angle here is measured clockwise from the
rightward ray.
"""

from gaugepipe.angles import AngleTriple, GaugeRange, angle_to_reading, dequantize, keypoint_angle, quantize
from gaugepipe.evalkit import correct_explement_labels, tolerance_pass

# a gauge whose start marker sits at lower left (135 deg) and end marker at lower right (45 deg)
center = (100.0, 100.0)
start = (100.0 - 70.0, 100.0 + 70.0)

# needle pointing straight up: a quarter turn plus 45 deg from the start marker
tip = (100.0, 20.0)
print("span start->tip:", keypoint_angle(center, start, tip))

# needle pointing right: the span is reflex, larger than 180
tip = (180.0, 100.0)
print("reflex span:", keypoint_angle(center, start, tip))

# labels produced with the interior angle only can be repaired from the keypoints
print("corrected labels:", correct_explement_labels([135.0], [(center, start, tip)]))

# the reading network predicts one of 360 one-degree bins per landmark
for a in (0.0, 0.99, 359.5, -0.25):
    b = quantize(a)
    print(f"angle {a:7.2f} -> bin {b:3d} -> {dequantize(b):6.2f}")

# angles become a reading by linear interpolation along the clockwise sweep
triple = AngleTriple(start=135.0, end=45.0, needle=270.0)
r = angle_to_reading(triple, GaugeRange(0.0, 10.0, "bar"))
print(f"reading {r.value:.3f} {r.unit}, out of scale: {r.out_of_scale}")

# a field reading is acceptable within 2% of the range or two ticks, whichever is larger
print("0.35 bar off on a 0-10 bar gauge with 0.2 ticks:", tolerance_pass(r.value + 0.35, r.value, (0, 10), 0.2))
print("0.45 bar off:", tolerance_pass(r.value + 0.45, r.value, (0, 10), 0.2))
