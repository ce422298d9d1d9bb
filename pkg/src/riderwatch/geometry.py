"""Rectangle and trapezium geometry in screen coordinates (y grows downward).

Everything here is double precision and pure; shapes are immutable values.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

Point = tuple[float, float]

DEGENERATE_AREA = 1e-12
EMPTY_CLIP_AREA = 1e-9


class DegeneratePolygonError(ValueError):
    """Raised when a polygon has (numerically) zero area."""


class InvalidTrapeziumError(ValueError):
    """Raised when four vertices do not form a valid vertical-sided trapezium."""


@dataclass(frozen=True)
class Rect:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (float(self.x1), float(self.y1), float(self.x2), float(self.y2))
        for name, v in zip(("x1", "y1", "x2", "y2"), vals):
            object.__setattr__(self, name, v)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite rect {vals}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"empty rect {vals}")

    def __iter__(self) -> Iterator[float]:
        return iter((self.x1, self.y1, self.x2, self.y2))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def corners(self) -> list[Point]:
        """Corners in TL, TR, BR, BL order."""
        return [(self.x1, self.y1), (self.x2, self.y1), (self.x2, self.y2), (self.x1, self.y2)]

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def clip_to(self, width: float, height: float) -> "Rect | None":
        """Intersect with the frame ``[0, width] x [0, height]``; None if nothing is left."""
        x1, y1 = max(self.x1, 0.0), max(self.y1, 0.0)
        x2, y2 = min(self.x2, float(width)), min(self.y2, float(height))
        if x1 >= x2 or y1 >= y2:
            return None
        return Rect(x1, y1, x2, y2)

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "Rect":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @classmethod
    def bounding(cls, rects: Sequence["Rect"]) -> "Rect":
        return cls(
            min(r.x1 for r in rects),
            min(r.y1 for r in rects),
            max(r.x2 for r in rects),
            max(r.y2 for r in rects),
        )


def intersection_area(a: Rect, b: Rect) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def rect_iou(a: Rect, b: Rect) -> float:
    inter = intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def signed_area(vertices: Sequence[Point]) -> float:
    """Shoelace area of a closed polygon; positive for clockwise order on screen."""
    n = len(vertices)
    total = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        total += x0 * y1 - x1 * y0
    return total / 2.0


def centroid(vertices: Sequence[Point]) -> Point:
    """Area centroid of a closed polygon.

    Vertex order may be either winding; the signed area in the denominator
    cancels the sign of the numerator sums.
    """
    a = signed_area(vertices)
    if abs(a) <= DEGENERATE_AREA:
        raise DegeneratePolygonError(f"polygon area {a!r} is degenerate")
    n = len(vertices)
    sx = sy = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        cross = x0 * y1 - x1 * y0
        sx += (x0 + x1) * cross
        sy += (y0 + y1) * cross
    return (sx / (6.0 * a), sy / (6.0 * a))


def point_in_polygon(p: Point, vertices: Sequence[Point], tol: float = 0.0) -> bool:
    """True if ``p`` is inside or within ``tol`` of a convex polygon's boundary."""
    a = signed_area(vertices)
    sign = 1.0 if a >= 0 else -1.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        cross = (x1 - x0) * (p[1] - y0) - (y1 - y0) * (p[0] - x0)
        edge_len = np.hypot(x1 - x0, y1 - y0)
        if sign * cross < -tol * max(edge_len, 1.0):
            return False
    return True


def _clip_half_plane(poly: list[Point], inside, intersect) -> list[Point]:
    out: list[Point] = []
    if not poly:
        return out
    prev = poly[-1]
    prev_in = inside(prev)
    for cur in poly:
        cur_in = inside(cur)
        if cur_in:
            if not prev_in:
                out.append(intersect(prev, cur))
            out.append(cur)
        elif prev_in:
            out.append(intersect(prev, cur))
        prev, prev_in = cur, cur_in
    return out


def _cut_x(p: Point, q: Point, x: float) -> Point:
    t = (x - p[0]) / (q[0] - p[0])
    return (x, p[1] + t * (q[1] - p[1]))


def _cut_y(p: Point, q: Point, y: float) -> Point:
    t = (y - p[1]) / (q[1] - p[1])
    return (p[0] + t * (q[0] - p[0]), y)


def clip_polygon(poly: Sequence[Point], clip: Rect) -> list[Point]:
    """Sutherland-Hodgman clip of a convex polygon against an axis-aligned rect."""
    out = list(poly)
    out = _clip_half_plane(out, lambda p: p[0] >= clip.x1, lambda p, q: _cut_x(p, q, clip.x1))
    out = _clip_half_plane(out, lambda p: p[0] <= clip.x2, lambda p, q: _cut_x(p, q, clip.x2))
    out = _clip_half_plane(out, lambda p: p[1] >= clip.y1, lambda p, q: _cut_y(p, q, clip.y1))
    out = _clip_half_plane(out, lambda p: p[1] <= clip.y2, lambda p, q: _cut_y(p, q, clip.y2))
    return out


def clip_convex(poly: Sequence[Point], clip: Sequence[Point]) -> list[Point]:
    """Clip a convex polygon by another convex polygon (either winding)."""
    sign = 1.0 if signed_area(clip) >= 0 else -1.0
    out = list(poly)
    n = len(clip)
    for i in range(n):
        a = clip[i]
        b = clip[(i + 1) % n]

        def side(p, a=a, b=b):
            return sign * ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]))

        def cut(p, q):
            sp, sq = side(p), side(q)
            t = sp / (sp - sq)
            return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))

        out = _clip_half_plane(out, lambda p: side(p) >= 0.0, cut)
        if not out:
            break
    return out


@dataclass(frozen=True)
class Trapezium:
    """Quadrilateral with two vertical sides, vertices ordered TL, TR, BR, BL."""

    vertices: tuple[Point, Point, Point, Point]

    def __post_init__(self):
        if len(self.vertices) != 4:
            raise InvalidTrapeziumError("a trapezium needs exactly 4 vertices")
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        (xtl, ytl), (xtr, ytr), (xbr, ybr), (xbl, ybl) = verts
        if not all(np.isfinite(v) for p in verts for v in p):
            raise InvalidTrapeziumError("non-finite vertex")
        if xtl != xbl or xtr != xbr:
            raise InvalidTrapeziumError("sides 0-3 and 1-2 must be vertical")
        if not xtl < xtr:
            raise InvalidTrapeziumError("left side must lie left of right side")
        # Crossed top/bottom edges would make the polygon self-intersecting.
        if not (ytl < ybl and ytr < ybr):
            raise InvalidTrapeziumError("top edge must lie above bottom edge on both sides")

    @classmethod
    def from_rect(cls, r: Rect) -> "Trapezium":
        return cls(tuple(r.corners()))

    @classmethod
    def from_sides(cls, left: float, right: float, ytl: float, ytr: float, ybr: float, ybl: float) -> "Trapezium":
        return cls(((left, ytl), (right, ytr), (right, ybr), (left, ybl)))

    @property
    def left(self) -> float:
        return self.vertices[0][0]

    @property
    def right(self) -> float:
        return self.vertices[1][0]

    @property
    def area(self) -> float:
        return abs(signed_area(self.vertices))

    @property
    def centroid(self) -> Point:
        return centroid(self.vertices)

    def bounding_rect(self) -> Rect:
        ys = [p[1] for p in self.vertices]
        return Rect(self.left, min(ys), self.right, max(ys))

    def contains(self, p: Point, tol: float = 1e-9) -> bool:
        return point_in_polygon(p, self.vertices, tol)

    def as_list(self) -> list[float]:
        return [c for p in self.vertices for c in p]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Trapezium":
        if len(values) != 8:
            raise InvalidTrapeziumError("expected 8 coordinates")
        v = [float(c) for c in values]
        return cls(((v[0], v[1]), (v[2], v[3]), (v[4], v[5]), (v[6], v[7])))


def polygon_area(poly: Sequence[Point]) -> float:
    if len(poly) < 3:
        return 0.0
    return abs(signed_area(poly))


def trap_rect_iou(t: Trapezium, r: Rect) -> float:
    inter = polygon_area(clip_polygon(t.vertices, r))
    if inter < EMPTY_CLIP_AREA:
        return 0.0
    return inter / (t.area + r.area - inter)


def shape_polygon(shape: "Rect | Trapezium") -> list[Point]:
    if isinstance(shape, Rect):
        return shape.corners()
    return list(shape.vertices)


def shape_iou(a: "Rect | Trapezium", b: "Rect | Trapezium") -> float:
    """IOU between any two of Rect / Trapezium."""
    if isinstance(a, Rect) and isinstance(b, Rect):
        return rect_iou(a, b)
    if isinstance(b, Rect):
        return trap_rect_iou(a, b)
    if isinstance(a, Rect):
        return trap_rect_iou(b, a)
    inter = polygon_area(clip_convex(a.vertices, b.vertices))
    if inter < EMPTY_CLIP_AREA:
        return 0.0
    return inter / (a.area + b.area - inter)
