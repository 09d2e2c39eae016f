"""Planar clipping primitives used for area-weighted spatial allocation.

Everything here works on plain coordinate pairs in projected meters:
polygons are vertex lists (open or closed rings both accepted), rectangles
are (x0, y0, x1, y1).  Polygon-against-rectangle clipping is
Sutherland-Hodgman; segment clipping is Liang-Barsky.
"""

from __future__ import annotations

import math

from .errors import InvalidInputError

Point = tuple[float, float]


def normalize_ring(ring) -> list[Point]:
    """Drop a closing duplicate vertex and consecutive duplicates."""
    pts = [(float(x), float(y)) for x, y in ring]
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    out: list[Point] = []
    for p in pts:
        if not out or p != out[-1]:
            out.append(p)
    return out


def polygon_area(ring) -> float:
    """Unsigned shoelace area of a simple polygon."""
    pts = normalize_ring(ring)
    n = len(pts)
    acc = 0.0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) * 0.5


def _orient(a: Point, b: Point, c: Point) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a: Point, b: Point, p: Point) -> bool:
    return (min(a[0], b[0]) <= p[0] <= max(a[0], b[0])
            and min(a[1], b[1]) <= p[1] <= max(a[1], b[1]))


def _segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool:
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 != 0 and o2 != 0 \
            and o3 != 0 and o4 != 0:
        return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


def validate_simple_polygon(ring) -> list[Point]:
    """Return the normalized ring, or raise for degenerate/self-crossing input."""
    pts = normalize_ring(ring)
    n = len(pts)
    if n < 3:
        raise InvalidInputError(f"polygon needs >= 3 distinct vertices, got {n}")
    if polygon_area(pts) == 0.0:
        raise InvalidInputError("polygon has zero area")
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        for j in range(i + 1, n):
            # Adjacent edges share a vertex by construction; skip them.
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            c, d = pts[j], pts[(j + 1) % n]
            if _segments_intersect(a, b, c, d):
                raise InvalidInputError(
                    f"polygon self-intersects between edges {i} and {j}")
    return pts


def clip_polygon_rect(ring, x0: float, y0: float, x1: float, y1: float) -> list[Point]:
    """Sutherland-Hodgman clip of a simple polygon against a rectangle."""
    pts = normalize_ring(ring)

    def clip_half(points, inside, intersect):
        out = []
        n = len(points)
        for i in range(n):
            cur, nxt = points[i], points[(i + 1) % n]
            cur_in, nxt_in = inside(cur), inside(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def cross_x(bound):
        def f(p, q):
            t = (bound - p[0]) / (q[0] - p[0])
            return (bound, p[1] + t * (q[1] - p[1]))
        return f

    def cross_y(bound):
        def f(p, q):
            t = (bound - p[1]) / (q[1] - p[1])
            return (p[0] + t * (q[0] - p[0]), bound)
        return f

    for inside, intersect in (
        (lambda p: p[0] >= x0, cross_x(x0)),
        (lambda p: p[0] <= x1, cross_x(x1)),
        (lambda p: p[1] >= y0, cross_y(y0)),
        (lambda p: p[1] <= y1, cross_y(y1)),
    ):
        pts = clip_half(pts, inside, intersect)
        if not pts:
            return []
    return pts


def clip_segment_rect(p: Point, q: Point, x0: float, y0: float, x1: float, y1: float):
    """Liang-Barsky clip; returns the surviving (p', q') or None."""
    dx, dy = q[0] - p[0], q[1] - p[1]
    t_in, t_out = 0.0, 1.0
    for num, den in (
        (x0 - p[0], dx),
        (p[0] - x1, -dx),
        (y0 - p[1], dy),
        (p[1] - y1, -dy),
    ):
        if den == 0.0:
            if num > 0.0:
                return None
            continue
        t = num / den
        if den > 0.0:
            if t > t_out:
                return None
            if t > t_in:
                t_in = t
        else:
            if t < t_in:
                return None
            if t < t_out:
                t_out = t
    a = (p[0] + t_in * dx, p[1] + t_in * dy)
    b = (p[0] + t_out * dx, p[1] + t_out * dy)
    return a, b


def segment_length(p: Point, q: Point) -> float:
    return math.hypot(q[0] - p[0], q[1] - p[1])
