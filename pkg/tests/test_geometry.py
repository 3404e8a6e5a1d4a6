import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqdedup.geometry import (
    Box,
    ImageSize,
    area,
    boxes_to_array,
    iou,
    iou_matrix,
    normalize_geometric,
)


def test_area_square():
    assert area(Box(0, 0, 2, 2)) == 4


def test_area_degenerate_width():
    assert area(Box(1, 1, 1, 5)) == 0


def test_area_large():
    assert area(Box(0, 0, 10, 10)) == 100


def test_box_rejects_inverted_corners():
    with pytest.raises(ValueError):
        Box(3, 0, 1, 2)
    with pytest.raises(ValueError):
        Box(0, 5, 2, 1)


def test_box_rejects_non_finite():
    with pytest.raises(ValueError):
        Box(0, 0, math.inf, 1)
    with pytest.raises(ValueError):
        Box(0, math.nan, 1, 1)


def test_image_size_positive():
    with pytest.raises(ValueError):
        ImageSize(0, 10)
    with pytest.raises(ValueError):
        ImageSize(10, -1)


def test_iou_identity():
    b = Box(0, 0, 2, 2)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(Box(0, 0, 1, 1), Box(5, 5, 6, 6)) == 0.0


def test_iou_partial_overlap():
    # intersection 1, union 7
    assert iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)


def test_iou_zero_area_boxes():
    degenerate = Box(1, 1, 1, 1)
    assert iou(degenerate, degenerate) == 0.0
    assert iou(degenerate, Box(0, 0, 2, 2)) == 0.0


boxes = st.builds(
    lambda x1, y1, w, h: Box(x1, y1, x1 + w, y1 + h),
    st.floats(-100, 100),
    st.floats(-100, 100),
    st.floats(0, 50),
    st.floats(0, 50),
)


@given(boxes, boxes)
def test_iou_symmetric(a, b):
    assert iou(a, b) == pytest.approx(iou(b, a), abs=1e-15)


@given(boxes)
def test_iou_self_is_one_for_positive_area(b):
    if area(b) > 0:
        assert iou(b, b) == 1.0


@given(boxes, boxes)
def test_iou_in_unit_interval(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0


def test_normalize_full_image_box():
    got = normalize_geometric(Box(0, 0, 640, 480), ImageSize(640, 480))
    want = [math.log(0.5), math.log(0.5), math.log(1.5), math.log(1.5)]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_normalize_right_half():
    got = normalize_geometric(Box(320, 0, 640, 480), ImageSize(640, 480))
    want = [0.0, math.log(0.5), math.log(1.5), math.log(1.5)]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_normalize_half_sized_box():
    got = normalize_geometric(Box(0, 0, 100, 50), ImageSize(200, 100))
    want = [math.log(0.5), math.log(0.5), 0.0, 0.0]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_normalize_rejects_box_too_far_outside():
    with pytest.raises(ValueError):
        normalize_geometric(Box(-200, 0, 10, 10), ImageSize(100, 100))


@settings(max_examples=60)
@given(
    st.floats(0.01, 500),
    st.floats(0.01, 400),
    st.floats(10, 600),
    st.floats(10, 600),
    st.floats(0.1, 1000),
)
def test_normalize_scale_invariance(x1, y1, w, h, k):
    b = Box(x1, y1, x1 + w / 3, y1 + h / 3)
    img = ImageSize(w, h)
    scaled = Box(b.x1 * k, b.y1 * k, b.x2 * k, b.y2 * k)
    a = normalize_geometric(b, img)
    c = normalize_geometric(scaled, ImageSize(w * k, h * k))
    np.testing.assert_allclose(a, c, atol=1e-12)


def test_iou_matrix_matches_scalar():
    rng = np.random.default_rng(7)
    xs = rng.uniform(0, 50, size=(8, 2))
    ws = rng.uniform(0, 20, size=(8, 2))
    bs = [Box(x, y, x + w, y + h) for (x, y), (w, h) in zip(xs, ws)]
    arr = boxes_to_array(bs)
    mat = iou_matrix(arr, arr)
    for i, a in enumerate(bs):
        for j, b in enumerate(bs):
            assert mat[i, j] == pytest.approx(iou(a, b), abs=1e-13)
