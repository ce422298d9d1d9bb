import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import monte_carlo_iou
from riderwatch.geometry import (DegeneratePolygonError, InvalidTrapeziumError, Rect, Trapezium, centroid,
                                 clip_convex, clip_polygon, point_in_polygon, polygon_area, rect_iou,
                                 shape_iou, signed_area, trap_rect_iou)

WORKED = [(0.0, 0.0), (3.0, -1.0), (3.0, 3.0), (0.0, 2.0)]


def test_signed_area_examples():
    assert signed_area([(0, 0), (1, 0), (1, 1), (0, 1)]) == pytest.approx(1.0)
    assert signed_area(WORKED) == pytest.approx(9.0, abs=1e-12)
    assert signed_area([(0, 0), (1, 1), (2, 2), (3, 3)]) == 0.0


def test_worked_trapezium_matches_hand_sums():
    # Hand evaluation: area sum 18, x-moment 90, y-moment 54.
    x, y = centroid(WORKED)
    assert x == pytest.approx(90.0 / (6 * 9.0), abs=1e-9)
    assert y == pytest.approx(54.0 / (6 * 9.0), abs=1e-9)
    assert (x, y) == pytest.approx((5.0 / 3.0, 1.0), abs=1e-9)
    assert (2 + 4) / 2 * 3 == pytest.approx(signed_area(WORKED))


def test_centroid_winding_reversal():
    assert centroid(WORKED[::-1]) == pytest.approx((5.0 / 3.0, 1.0), abs=1e-12)
    assert signed_area(WORKED[::-1]) == pytest.approx(-9.0)
    assert centroid([(0, 0), (1, 0), (1, 1), (0, 1)]) == pytest.approx((0.5, 0.5))


def test_centroid_degenerate():
    with pytest.raises(DegeneratePolygonError):
        centroid([(0, 0), (1, 1), (2, 2), (3, 3)])


def test_rect_iou_examples():
    a = Rect(0, 0, 2, 2)
    assert rect_iou(a, a) == 1.0
    assert rect_iou(Rect(0, 0, 1, 1), Rect(5, 5, 6, 6)) == 0.0
    assert rect_iou(a, Rect(1, 0, 3, 2)) == pytest.approx(1 / 3)


def test_clip_examples():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert polygon_area(clip_polygon(sq, Rect(0, 0, 1, 1))) == pytest.approx(1.0)
    inner = [(2, 2), (3, 2), (3, 3), (2, 3)]
    assert sorted(clip_polygon(inner, Rect(0, 0, 10, 10))) == sorted(inner)
    clipped = clip_polygon(WORKED, Rect(1, 0, 2, 1))
    assert polygon_area(clipped) == pytest.approx(1.0)
    for c in Rect(1, 0, 2, 1).corners():
        assert point_in_polygon(c, WORKED)


def test_trap_rect_iou_examples():
    t = Trapezium(tuple(WORKED))
    assert trap_rect_iou(t, Rect(1, 0, 2, 1)) == pytest.approx(1 / 9)
    r = Rect(3, 4, 10, 9)
    assert trap_rect_iou(Trapezium.from_rect(r), r) == pytest.approx(1.0)
    assert trap_rect_iou(t, Rect(10, 10, 11, 11)) == 0.0


def test_trapezium_validation():
    with pytest.raises(InvalidTrapeziumError):
        Trapezium(((0, 0), (3, -1), (3, 3), (0.5, 2)))  # left side not vertical
    with pytest.raises(InvalidTrapeziumError):
        Trapezium(((0, 2), (3, -1), (3, 3), (0, 1)))  # bottom above top on the left
    with pytest.raises(InvalidTrapeziumError):
        Trapezium(((3, 0), (0, 0), (0, 1), (3, 1)))


def test_rect_validation_and_clip():
    with pytest.raises(ValueError):
        Rect(1, 0, 1, 5)
    assert Rect(-5, -5, 5, 5).clip_to(3, 3) == Rect(0, 0, 3, 3)
    assert Rect(10, 10, 20, 20).clip_to(5, 5) is None


def _quad_from(angles, radii):
    order = np.argsort(angles)
    return [(float(r * math.cos(a)), float(r * math.sin(a))) for a, r in zip(np.asarray(angles)[order],
                                                                        np.asarray(radii)[order])]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 2 * math.pi - 1e-3), min_size=4, max_size=4, unique=True),
       st.lists(st.floats(0.5, 10.0), min_size=4, max_size=4))
def test_area_equals_diagonal_split(angles, radii):
    # Star-shaped around the origin, so it is simple.
    q = _quad_from(angles, radii)
    tri = signed_area(q[:3]) + signed_area([q[0], q[2], q[3]])
    assert signed_area(q) == pytest.approx(tri, rel=1e-9, abs=1e-9)
    assert signed_area(q[::-1]) == pytest.approx(-signed_area(q), abs=1e-12)


def _random_trap(rng, lo=0.0, hi=10.0):
    left, right = sorted(rng.uniform(lo, hi, 2))
    if right - left < 0.2:
        right = left + 0.2
    ytl, ytr = rng.uniform(lo, hi / 2, 2)
    ybl = ytl + rng.uniform(0.2, hi / 2)
    ybr = ytr + rng.uniform(0.2, hi / 2)
    return Trapezium.from_sides(left, right, ytl, ytr, ybr, ybl)


def _random_rect(rng, lo=0.0, hi=10.0):
    x1, y1 = rng.uniform(lo, hi - 0.5, 2)
    return Rect(x1, y1, x1 + rng.uniform(0.3, 6.0), y1 + rng.uniform(0.3, 6.0))


def test_centroid_inside_convex():
    rng = np.random.default_rng(11)
    for _ in range(300):
        t = _random_trap(rng)
        assert t.contains(t.centroid)


def test_iou_bounds_and_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(300):
        a, b = _random_rect(rng), _random_rect(rng)
        v = rect_iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == rect_iou(b, a)
        t = _random_trap(rng)
        w = trap_rect_iou(t, b)
        assert 0.0 <= w <= 1.0
        assert shape_iou(b, t) == pytest.approx(w)


def test_clip_convex_agrees_with_rect_clip():
    rng = np.random.default_rng(5)
    for _ in range(100):
        t, r = _random_trap(rng), _random_rect(rng)
        a = polygon_area(clip_polygon(list(t.vertices), r))
        b = polygon_area(clip_convex(list(t.vertices), r.corners()))
        assert a == pytest.approx(b, abs=1e-9)


def test_trap_rect_iou_monte_carlo_small():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t, r = _random_trap(rng), _random_rect(rng)
        assert trap_rect_iou(t, r) == pytest.approx(monte_carlo_iou(t, r, 20000, rng), abs=0.02)
