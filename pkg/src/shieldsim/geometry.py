"""Small 2D vector/polygon helpers used by the road network and simulator.

Everything here sticks to difference/dot/cross/hypot arithmetic so results
are bit-stable under exact rigid transforms (quarter-turn rotations and
lattice translations), which the observation encoder relies on.
"""

from __future__ import annotations

import math

Point = tuple[float, float]

LATTICE = 64.0  # map coordinates snap to 1/64 m


def snap(x: float) -> float:
    """Round a coordinate onto the 1/64 m lattice."""
    return round(x * LATTICE) / LATTICE


def dot(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * bx + ay * by


def cross(ax: float, ay: float, bx: float, by: float) -> float:
    return ax * by - ay * bx


def seg_intersects(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    """True if segment p1-p2 properly or improperly intersects q1-q2."""
    d1x, d1y = p2[0] - p1[0], p2[1] - p1[1]
    d2x, d2y = q2[0] - q1[0], q2[1] - q1[1]
    denom = cross(d1x, d1y, d2x, d2y)
    rx, ry = q1[0] - p1[0], q1[1] - p1[1]
    if denom == 0.0:
        if cross(rx, ry, d1x, d1y) != 0.0:
            return False
        # collinear: overlap test on the dominant axis
        t0 = dot(rx, ry, d1x, d1y)
        t1 = t0 + dot(d2x, d2y, d1x, d1y)
        lo, hi = min(t0, t1), max(t0, t1)
        return hi >= 0.0 and lo <= dot(d1x, d1y, d1x, d1y)
    t = cross(rx, ry, d2x, d2y) / denom
    u = cross(rx, ry, d1x, d1y) / denom
    return 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0


def seg_hits_rect(p1: Point, p2: Point, rect: tuple[float, float, float, float]) -> bool:
    """True if segment p1-p2 touches the axis-aligned rect (x0, y0, x1, y1).

    Slab clipping; endpoints inside the rect count as hits.
    """
    x0, y0, x1, y1 = rect
    t0, t1 = 0.0, 1.0
    dx = p2[0] - p1[0]
    dy = p2[1] - p1[1]
    for p, q0, q1 in ((dx, x0 - p1[0], x1 - p1[0]), (dy, y0 - p1[1], y1 - p1[1])):
        if p == 0.0:
            if q0 > 0.0 or q1 < 0.0:
                return False
            continue
        ta, tb = q0 / p, q1 / p
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return False
    return True


def rect_corners(cx: float, cy: float, ux: float, uy: float,
                 half_len: float, half_wid: float) -> list[Point]:
    """Corners of an oriented rectangle centered at (cx, cy) with axis (ux, uy)."""
    lx, ly = ux * half_len, uy * half_len
    wx, wy = -uy * half_wid, ux * half_wid
    return [
        (cx + lx + wx, cy + ly + wy),
        (cx + lx - wx, cy + ly - wy),
        (cx - lx - wx, cy - ly - wy),
        (cx - lx + wx, cy - ly + wy),
    ]


def convex_overlap(poly_a: list[Point], poly_b: list[Point]) -> bool:
    """SAT overlap test for two convex polygons (counterclockwise or clockwise)."""
    for poly1, poly2 in ((poly_a, poly_b), (poly_b, poly_a)):
        n = len(poly1)
        for i in range(n):
            ax, ay = poly1[i]
            bx, by = poly1[(i + 1) % n]
            ex, ey = bx - ax, by - ay
            # axis normal to this edge
            amin = amax = None
            for px, py in poly1:
                v = cross(ex, ey, px - ax, py - ay)
                amin = v if amin is None or v < amin else amin
                amax = v if amax is None or v > amax else amax
            bmin = bmax = None
            for px, py in poly2:
                v = cross(ex, ey, px - ax, py - ay)
                bmin = v if bmin is None or v < bmin else bmin
                bmax = v if bmax is None or v > bmax else bmax
            if amax < bmin or bmax < amin:
                return False
    return True


def clip_convex(subject: list[Point], clip: list[Point]) -> list[Point]:
    """Sutherland-Hodgman intersection of two convex polygons.

    `clip` must be counterclockwise. Returns [] when the overlap is empty.
    """
    out = list(subject)
    n = len(clip)
    for i in range(n):
        if not out:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        kept: list[Point] = []
        prev = out[-1]
        prev_side = cross(ex, ey, prev[0] - ax, prev[1] - ay)
        for cur in out:
            cur_side = cross(ex, ey, cur[0] - ax, cur[1] - ay)
            if cur_side >= 0.0:
                if prev_side < 0.0:
                    t = prev_side / (prev_side - cur_side)
                    kept.append((prev[0] + t * (cur[0] - prev[0]),
                                 prev[1] + t * (cur[1] - prev[1])))
                kept.append(cur)
            elif prev_side >= 0.0:
                t = prev_side / (prev_side - cur_side)
                kept.append((prev[0] + t * (cur[0] - prev[0]),
                             prev[1] + t * (cur[1] - prev[1])))
            prev, prev_side = cur, cur_side
        out = kept
    return out


def polygon_area(poly: list[Point]) -> float:
    n = len(poly)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) * 0.5


def ccw(poly: list[Point]) -> list[Point]:
    """Return the polygon with counterclockwise winding."""
    acc = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return list(poly) if acc >= 0.0 else list(reversed(poly))


def project_span(poly: list[Point], origin: Point, ux: float, uy: float) -> tuple[float, float]:
    """Min/max of the polygon projected on the axis through origin along (ux, uy)."""
    lo = hi = None
    ox, oy = origin
    for px, py in poly:
        v = dot(ux, uy, px - ox, py - oy)
        lo = v if lo is None or v < lo else lo
        hi = v if hi is None or v > hi else hi
    return lo, hi


class Polyline:
    """A polyline with cached cumulative arclength and fast point lookup."""

    __slots__ = ("pts", "cum", "length")

    def __init__(self, pts: list[Point]):
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        self.pts = pts
        cum = [0.0]
        total = 0.0
        for i in range(len(pts) - 1):
            total += math.hypot(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1])
            cum.append(total)
        self.cum = cum
        self.length = total

    def point_at(self, s: float) -> tuple[float, float, float, float]:
        """(x, y, ux, uy) at arclength s, clamped to the ends."""
        pts, cum = self.pts, self.cum
        if s <= 0.0:
            s = 0.0
            i = 0
        elif s >= self.length:
            s = self.length
            i = len(pts) - 2
        else:
            # linear scan: lanes are straight or near-straight (2-3 points)
            i = 0
            while cum[i + 1] < s:
                i += 1
        x0, y0 = pts[i]
        x1, y1 = pts[i + 1]
        seg = cum[i + 1] - cum[i]
        ux = (x1 - x0) / seg
        uy = (y1 - y0) / seg
        t = s - cum[i]
        return (x0 + t * ux, y0 + t * uy, ux, uy)
