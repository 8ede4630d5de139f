import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from iod.core import (
    Box,
    ClipAnnotation,
    GeometryError,
    Tube,
    from_center_size,
    interpolate_annotations,
    iou,
)

coord = st.floats(-200, 200, allow_nan=False)
extent = st.floats(0.5, 100, allow_nan=False)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coord), draw(coord), draw(extent), draw(extent)
    return Box(x, y, x + w, y + h)


def pixel_iou(a, b, step=0.01):
    """Count membership of grid-point centers in each box."""
    lo_x, hi_x = min(a.x1, b.x1), max(a.x2, b.x2)
    lo_y, hi_y = min(a.y1, b.y1), max(a.y2, b.y2)
    xs = np.arange(lo_x + step / 2, hi_x, step)[None, :]
    ys = np.arange(lo_y + step / 2, hi_y, step)[:, None]
    in_a = (xs > a.x1) & (xs < a.x2) & (ys > a.y1) & (ys < a.y2)
    in_b = (xs > b.x1) & (xs < b.x2) & (ys > b.y1) & (ys < b.y2)
    return (in_a & in_b).sum() / (in_a | in_b).sum()


def test_box_rejects_bad_geometry():
    with pytest.raises(GeometryError):
        Box(0, 0, 0, 5)
    with pytest.raises(GeometryError):
        Box(0, 0, 5, -1)
    with pytest.raises(GeometryError):
        Box(0, 0, math.nan, 5)
    with pytest.raises(GeometryError):
        Box(0, 0, 1, 1, score=1.5)


def test_box_accessors():
    b = Box(2, 4, 12, 10)
    assert (b.w, b.h, b.area) == (10, 6, 60)
    assert b.center == (7, 7)
    assert b.center_size() == (7, 7, 10, 6)


def test_iou_examples():
    assert iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0
    assert iou(Box(0, 0, 1, 1), Box(2, 2, 3, 3)) == 0.0
    a, b = Box(0, 0, 10, 10), Box(5, 0, 15, 10)
    assert iou(a, b) == pytest.approx(1 / 3, abs=1e-12)
    assert iou(a, b) == pytest.approx(pixel_iou(a, b), abs=1e-3)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes())
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(boxes(), boxes(), st.floats(-50, 50), st.floats(-50, 50))
def test_iou_translation_invariant(a, b, dx, dy):
    assert iou(a.shifted(dx, dy), b.shifted(dx, dy)) == pytest.approx(iou(a, b), abs=1e-9)


def test_iou_matches_pixel_grid_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(5):
        x, y = rng.uniform(0, 5, 2)
        a = Box(x, y, x + rng.uniform(1, 4), y + rng.uniform(1, 4))
        x, y = rng.uniform(0, 5, 2)
        b = Box(x, y, x + rng.uniform(1, 4), y + rng.uniform(1, 4))
        assert iou(a, b) == pytest.approx(pixel_iou(a, b), abs=5e-3)


def test_from_center_size_examples():
    assert from_center_size(5, 5, 10, 10).as_tuple() == (0, 0, 10, 10)
    assert from_center_size(0, 0, 2, 2).as_tuple() == (-1, -1, 1, 1)
    with pytest.raises(GeometryError):
        from_center_size(0, 0, 0, 2)


@given(boxes())
def test_center_size_round_trip(b):
    r = from_center_size(*b.center_size())
    assert r.as_tuple() == pytest.approx(b.as_tuple(), abs=1e-9)


def test_interpolation_examples():
    kf = [(0, Box(0, 0, 10, 10)), (5, Box(5, 5, 15, 15))]
    tube = interpolate_annotations(kf, 8)
    assert tube.box_at(2).as_tuple() == pytest.approx((2, 2, 12, 12))
    assert tube.box_at(7) == Box(5, 5, 15, 15)
    single = interpolate_annotations([(0, Box(1, 2, 3, 4))], 6)
    assert all(b == Box(1, 2, 3, 4) for b in single.boxes)


def test_interpolation_holds_first_box_before_first_keyframe():
    tube = interpolate_annotations([(2, Box(0, 0, 4, 4)), (4, Box(2, 0, 6, 4))], 6)
    assert tube.box_at(0) == tube.box_at(1) == Box(0, 0, 4, 4)


def test_interpolation_errors():
    with pytest.raises(GeometryError):
        interpolate_annotations([(0, Box(0, 0, 1, 1)), (0, Box(0, 0, 2, 2))], 4)
    with pytest.raises(GeometryError):
        interpolate_annotations([(3, Box(0, 0, 1, 1)), (1, Box(0, 0, 2, 2))], 4)
    with pytest.raises(GeometryError):
        interpolate_annotations([(5, Box(0, 0, 1, 1))], 4)
    with pytest.raises(GeometryError):
        interpolate_annotations([], 4)


@given(st.lists(st.tuples(st.integers(1, 6), boxes()), min_size=1, max_size=5), st.integers(0, 3))
def test_interpolation_exact_at_keys_and_monotone_between(steps, first):
    frames = np.cumsum([first] + [s for s, _ in steps[1:]]).tolist()
    kf = [(int(f), b) for f, (_, b) in zip(frames, steps)]
    n = frames[-1] + 3
    tube = interpolate_annotations(kf, n)
    for f, b in kf:
        assert tube.box_at(f) == b
    for (f0, b0), (f1, b1) in zip(kf, kf[1:]):
        for k in range(4):
            vals = [tube.box_at(t).as_tuple()[k] for t in range(f0, f1 + 1)]
            d = np.diff(vals)
            assert np.all(d >= -1e-9) or np.all(d <= 1e-9)


def _clip(boxes, **kw):
    base = dict(clip_id="c", width=100, height=100, n_frames=len(boxes), visibility="clear",
                scene="wild", size_class="middle", gt=Tube(0, tuple(boxes)))
    base.update(kw)
    return ClipAnnotation(**base)


def test_clip_annotation_validation():
    good = [Box(10 + t, 10, 30 + t, 30) for t in range(4)]
    _clip(good).validate()
    with pytest.raises(GeometryError):
        _clip(good, visibility="foggy").validate()
    with pytest.raises(GeometryError):
        _clip(good, n_frames=5).validate()
    with pytest.raises(GeometryError):
        _clip([Box(90, 90, 110, 110)]).validate()
    jump = [Box(0, 0, 10, 10), Box(60, 0, 70, 10)]
    with pytest.raises(GeometryError):
        _clip(jump).validate()


def test_tube_centers_and_frames():
    tube = Tube(3, (Box(0, 0, 2, 2), Box(2, 0, 4, 2)))
    assert list(tube.frames) == [3, 4]
    assert tube.centers() == [(1, 1), (3, 1)]
    assert tube.box_at(4) == Box(2, 0, 4, 2)
