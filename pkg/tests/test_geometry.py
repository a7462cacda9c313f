import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from paveval.errors import ValidationError
from paveval.geometry import BBox, area, boxes_array, clip, intersect, iou, iou_matrix


@st.composite
def boxes(draw, lo=0.0, hi=500.0):
    x0 = draw(st.floats(lo, hi - 1))
    y0 = draw(st.floats(lo, hi - 1))
    x1 = draw(st.floats(x0 + 1e-3, hi))
    y1 = draw(st.floats(y0 + 1e-3, hi))
    return BBox(x0, y0, x1, y1)


@pytest.mark.parametrize(
    "box, expected",
    [((0, 0, 10, 10), 100), ((0, 0, 1, 1), 1), ((2.5, 0, 7.5, 4), 20)],
)
def test_area(box, expected):
    assert area(BBox(*box)) == expected


@pytest.mark.parametrize(
    "coords",
    [
        (0, 0, 0, 5),
        (5, 0, 4, 5),
        (0, 3, 5, 3),
        (0, 0, math.inf, 1),
        (math.nan, 0, 1, 1),
        (0, 0, 1e-200, 1e-200),
    ],
)
def test_degenerate_boxes_rejected(coords):
    with pytest.raises(ValidationError):
        BBox(*coords)


def test_intersect_examples():
    assert intersect(BBox(0, 0, 4, 4), BBox(0, 0, 4, 4)) == BBox(0, 0, 4, 4)
    assert intersect(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) is None
    assert intersect(BBox(0, 0, 10, 10), BBox(5, 5, 15, 15)) == BBox(5, 5, 10, 10)


def test_touching_edges_do_not_intersect():
    assert intersect(BBox(0, 0, 1, 1), BBox(1, 0, 2, 1)) is None
    assert intersect(BBox(0, 0, 1, 1), BBox(1, 1, 2, 2)) is None


def test_iou_examples():
    assert iou(BBox(1, 2, 3, 4), BBox(1, 2, 3, 4)) == 1.0
    assert iou(BBox(0, 0, 1, 1), BBox(2, 2, 3, 3)) == 0.0
    assert iou(BBox(0, 0, 10, 10), BBox(5, 5, 15, 15)) == pytest.approx(25 / 175, abs=1e-12)


def test_clip_examples():
    window = BBox(0, 0, 10, 10)
    assert clip(BBox(2, 3, 4, 5), window) == BBox(2, 3, 4, 5)
    assert clip(BBox(20, 20, 30, 30), window) is None
    assert clip(BBox(-5, 0, 5, 10), window) == BBox(0, 0, 5, 10)


def test_clip_translates_into_window_frame():
    assert clip(BBox(12, 14, 30, 30), BBox(10, 10, 20, 20)) == BBox(2, 4, 10, 10)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes())
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(boxes(), boxes())
def test_intersection_area_bounded(a, b):
    inter = intersect(a, b)
    if inter is not None:
        assert area(inter) <= min(area(a), area(b))


@given(boxes(-50, 300), boxes(0, 200))
def test_clip_lies_in_window(b, window):
    c = clip(b, window)
    if c is not None:
        assert c.within(window.width, window.height)


@given(st.lists(boxes(), max_size=5), st.lists(boxes(), max_size=5))
def test_iou_matrix_matches_scalar(a, b):
    m = iou_matrix(boxes_array(a), boxes_array(b))
    assert m.shape == (len(a), len(b))
    for i, bi in enumerate(a):
        for j, bj in enumerate(b):
            assert m[i, j] == iou(bi, bj)
