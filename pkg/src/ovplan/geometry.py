"""Planar geometry used by routing, simulation and verification.

All predicates work in a local east/north frame measured in meters.  Geographic
coordinates are only touched by :func:`project` / :func:`unproject`.
Membership tests are boundary inclusive everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

EARTH_RADIUS = 6_371_000.0
_EPS = 1e-9


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise GeometryError(f"invalid coordinate lat={self.lat} lon={self.lon}")


class LocalPoint(NamedTuple):
    x: float
    y: float


def project(p: GeoPoint, origin: GeoPoint) -> LocalPoint:
    """Equirectangular tangent-plane projection about ``origin``."""
    k = EARTH_RADIUS * math.cos(math.radians(origin.lat))
    return LocalPoint(k * math.radians(p.lon - origin.lon),
                      EARTH_RADIUS * math.radians(p.lat - origin.lat))


def unproject(q: Sequence[float], origin: GeoPoint, alt: float = 0.0) -> GeoPoint:
    k = EARTH_RADIUS * math.cos(math.radians(origin.lat))
    return GeoPoint(origin.lat + math.degrees(q[1] / EARTH_RADIUS),
                    origin.lon + math.degrees(q[0] / k), alt)


def _as_xy(p) -> tuple[float, float]:
    return float(p[0]), float(p[1])


def wrap_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


# --------------------------------------------------------------------------
# polygons
# --------------------------------------------------------------------------

def _segments_cross(p1, p2, q1, q2) -> bool:
    """Closed-segment intersection test (touching counts)."""
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) <= _EPS else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) - _EPS <= c[0] <= max(a[0], b[0]) + _EPS
                and min(a[1], b[1]) - _EPS <= c[1] <= max(a[1], b[1]) + _EPS)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, q1)) or (o2 == 0 and on_seg(p1, p2, q2))
            or (o3 == 0 and on_seg(q1, q2, p1)) or (o4 == 0 and on_seg(q1, q2, p2)))


def is_simple(vertices: Sequence[Sequence[float]]) -> bool:
    """True if the closed ring has no self-intersections (O(n^2))."""
    n = len(vertices)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = vertices[i], vertices[(i + 1) % n]
        if distance(a1, a2) <= _EPS:
            return False
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a1, a2, vertices[j], vertices[(j + 1) % n]):
                return False
    return True


def signed_area(vertices: Sequence[Sequence[float]]) -> float:
    s = 0.0
    n = len(vertices)
    for i in range(n):
        x1, y1 = vertices[i]
        x2, y2 = vertices[(i + 1) % n]
        s += x1 * y2 - x2 * y1
    return 0.5 * s


@dataclass(frozen=True)
class Polygon:
    """Simple polygon, possibly concave, stored counter-clockwise.

    Clockwise input is reversed; a repeated closing vertex is dropped.
    """

    vertices: tuple[LocalPoint, ...]
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        verts = [LocalPoint(*_as_xy(v)) for v in self.vertices]
        if len(verts) > 1 and distance(verts[0], verts[-1]) <= _EPS:
            verts.pop()
        if len(verts) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if self.check and not is_simple(verts):
            raise GeometryError("polygon is not simple")
        if signed_area(verts) < 0:
            verts.reverse()
        object.__setattr__(self, "vertices", tuple(verts))

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.array
        return a, np.roll(a, -1, axis=0)

    @cached_property
    def bbox(self) -> tuple[float, float, float, float]:
        a = self.array
        return a[:, 0].min(), a[:, 1].min(), a[:, 0].max(), a[:, 1].max()

    @property
    def area(self) -> float:
        return signed_area(self.vertices)


def points_in_polygon(points: np.ndarray, poly: Polygon) -> np.ndarray:
    """Vectorised winding-number membership, boundary inclusive."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = poly.edges
    px, py = pts[:, 0:1], pts[:, 1:2]
    ax, ay, bx, by = a[:, 0], a[:, 1], b[:, 0], b[:, 1]
    cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    up = (ay <= py) & (by > py) & (cross > 0)
    down = (ay > py) & (by <= py) & (cross < 0)
    winding = up.sum(axis=1) - down.sum(axis=1)
    on_edge = _point_segment_dist(pts, a, b).min(axis=1) <= _EPS
    return (winding != 0) | on_edge


def point_in_polygon(p, poly: Polygon) -> bool:
    x, y = _as_xy(p)
    x0, y0, x1, y1 = poly.bbox
    if x < x0 - _EPS or x > x1 + _EPS or y < y0 - _EPS or y > y1 + _EPS:
        return False
    return bool(points_in_polygon(np.array([[x, y]]), poly)[0])


def _point_segment_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances, shape (n_points, n_segments)."""
    d = b - a
    L2 = np.einsum("ij,ij->i", d, d)
    L2 = np.where(L2 > 0, L2, 1.0)
    rx = pts[:, 0:1] - a[:, 0]
    ry = pts[:, 1:2] - a[:, 1]
    t = np.clip((rx * d[:, 0] + ry * d[:, 1]) / L2, 0.0, 1.0)
    return np.hypot(rx - t * d[:, 0], ry - t * d[:, 1])


def point_polygon_distance(p, poly: Polygon) -> float:
    """Distance from p to the polygon boundary."""
    a, b = poly.edges
    return float(_point_segment_dist(np.array([_as_xy(p)]), a, b).min())


def _crossings(p, q, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean per edge a_i b_i: does closed segment pq touch it."""
    px, py = p
    qx, qy = q
    dx, dy = qx - px, qy - py
    ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
    o1 = dx * (a[:, 1] - py) - dy * (a[:, 0] - px)
    o2 = dx * (b[:, 1] - py) - dy * (b[:, 0] - px)
    o3 = ex * (py - a[:, 1]) - ey * (px - a[:, 0])
    o4 = ex * (qy - a[:, 1]) - ey * (qx - a[:, 0])
    proper = (np.sign(o1) * np.sign(o2) < 0) & (np.sign(o3) * np.sign(o4) < 0)
    if proper.any():
        return proper
    # touching / collinear cases: fall back on distance
    seg = np.array([[px, py], [qx, qy]])
    d_pts = _point_segment_dist(seg, a, b).min(axis=0)
    d_edge = _point_segment_dist(np.column_stack([np.r_[a[:, 0], b[:, 0]], np.r_[a[:, 1], b[:, 1]]]),
                                 seg[0:1], seg[1:2]).ravel()
    n = len(a)
    d_edge = np.minimum(d_edge[:n], d_edge[n:])
    return (np.minimum(d_pts, d_edge) <= _EPS)


def _bbox_disjoint(a, b, poly: Polygon, pad: float = 0.0) -> bool:
    x0, y0, x1, y1 = poly.bbox
    return (max(a[0], b[0]) < x0 - pad - _EPS or min(a[0], b[0]) > x1 + pad + _EPS
            or max(a[1], b[1]) < y0 - pad - _EPS or min(a[1], b[1]) > y1 + pad + _EPS)


def segment_intersects_polygon(a, b, poly: Polygon) -> bool:
    """True if segment ab crosses or touches the boundary, or an endpoint is inside."""
    a, b = _as_xy(a), _as_xy(b)
    if _bbox_disjoint(a, b, poly):
        return False
    if point_in_polygon(a, poly) or point_in_polygon(b, poly):
        return True
    ea, eb = poly.edges
    return bool(_crossings(a, b, ea, eb).any())


def segment_crosses_boundary(a, b, poly: Polygon) -> bool:
    ea, eb = poly.edges
    return bool(_crossings(_as_xy(a), _as_xy(b), ea, eb).any())


def first_crossing(a, b, poly: Polygon) -> float | None:
    """Distance from a to the first boundary crossing of segment ab, or None."""
    a, b = _as_xy(a), _as_xy(b)
    if _bbox_disjoint(a, b, poly):
        return None
    ea, eb = poly.edges
    dx, dy = b[0] - a[0], b[1] - a[1]
    ex, ey = eb[:, 0] - ea[:, 0], eb[:, 1] - ea[:, 1]
    den = dx * ey - dy * ex
    wx, wy = ea[:, 0] - a[0], ea[:, 1] - a[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (wx * ey - wy * ex) / den
        u = (wx * dy - wy * dx) / den
    ok = (np.abs(den) > _EPS) & (t >= -_EPS) & (t <= 1 + _EPS) & (u >= -_EPS) & (u <= 1 + _EPS)
    if not ok.any():
        return 0.0 if point_in_polygon(a, poly) else None
    return float(t[ok].min() * math.hypot(dx, dy))


def _segment_segment_dist(p, q, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    seg = np.array([p, q], dtype=float)
    d1 = _point_segment_dist(seg, a, b).min(axis=0)
    d2 = _point_segment_dist(a, seg[0:1], seg[1:2]).ravel()
    d3 = _point_segment_dist(b, seg[0:1], seg[1:2]).ravel()
    return np.minimum(d1, np.minimum(d2, d3))


def segment_polygon_clearance(a, b, poly: Polygon) -> float:
    """Minimum distance from segment ab to the polygon boundary.

    Raises GeometryError if the segment intersects the polygon.
    """
    if segment_intersects_polygon(a, b, poly):
        raise GeometryError("segment intersects polygon; clearance undefined")
    ea, eb = poly.edges
    return float(_segment_segment_dist(_as_xy(a), _as_xy(b), ea, eb).min())


def segment_within_clearance(a, b, poly: Polygon, clearance: float) -> bool:
    """True if segment ab intersects poly or passes closer than ``clearance``."""
    a, b = _as_xy(a), _as_xy(b)
    if _bbox_disjoint(a, b, poly, pad=clearance):
        return False
    if segment_intersects_polygon(a, b, poly):
        return True
    ea, eb = poly.edges
    return bool(_segment_segment_dist(a, b, ea, eb).min() < clearance)


# --------------------------------------------------------------------------
# ellipses
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Ellipse:
    center: LocalPoint
    semi_major: float
    semi_minor: float
    rotation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", LocalPoint(*_as_xy(self.center)))
        if not (self.semi_major >= self.semi_minor > 0):
            raise GeometryError(f"invalid semi-axes {self.semi_major}, {self.semi_minor}")
        object.__setattr__(self, "rotation", wrap_angle(self.rotation))

    def to_unit(self, pts: np.ndarray) -> np.ndarray:
        """Map points into the frame where this ellipse is the unit circle."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        dx = pts[:, 0] - self.center.x
        dy = pts[:, 1] - self.center.y
        return np.column_stack([(c * dx + s * dy) / self.semi_major,
                                (-s * dx + c * dy) / self.semi_minor])

    def boundary(self, n: int = 64) -> np.ndarray:
        t = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        x = self.semi_major * np.cos(t)
        y = self.semi_minor * np.sin(t)
        return np.column_stack([self.center.x + c * x - s * y, self.center.y + s * x + c * y])

    def inflated(self, margin: float) -> Ellipse:
        return Ellipse(self.center, self.semi_major + margin, self.semi_minor + margin, self.rotation)

    @property
    def area(self) -> float:
        return math.pi * self.semi_major * self.semi_minor


def points_in_ellipse(pts: np.ndarray, e: Ellipse) -> np.ndarray:
    u = e.to_unit(pts)
    return u[:, 0] ** 2 + u[:, 1] ** 2 <= 1.0


def point_in_ellipse(p, e: Ellipse) -> bool:
    return bool(points_in_ellipse(np.array([_as_xy(p)]), e)[0])


def _unit_segment_distance(u0: np.ndarray, u1: np.ndarray) -> np.ndarray:
    """Distance from origin to segments u0[i]-u1[i] (row-wise)."""
    d = u1 - u0
    L2 = np.einsum("ij,ij->i", d, d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(L2 > 0, -np.einsum("ij,ij->i", u0, d) / L2, 0.0)
    t = np.clip(t, 0.0, 1.0)
    c = u0 + t[:, None] * d
    return np.hypot(c[:, 0], c[:, 1])


def segment_intersects_ellipse(a, b, e: Ellipse, margin: float = 0.0) -> bool:
    """True if segment ab comes within ``margin`` meters of ellipse e.

    Tested in the unit-circle frame; the margin is divided by the minor
    semi-axis, which over-approximates the true buffer.
    """
    u = e.to_unit(np.array([_as_xy(a), _as_xy(b)]))
    dist = _unit_segment_distance(u[0:1], u[1:2])[0]
    return bool(dist <= 1.0 + margin / e.semi_minor)


def segment_ellipses_clearance(a, b, centers: np.ndarray, cos_r: np.ndarray, sin_r: np.ndarray,
                               semi_a: np.ndarray, semi_b: np.ndarray) -> np.ndarray:
    """Unit-frame distance from segment ab to many ellipses at once."""
    out = []
    for p in (a, b):
        dx = p[0] - centers[:, 0]
        dy = p[1] - centers[:, 1]
        out.append(np.column_stack([(cos_r * dx + sin_r * dy) / semi_a,
                                    (-sin_r * dx + cos_r * dy) / semi_b]))
    return _unit_segment_distance(out[0], out[1])


def _outside_point_ellipse_distance(y0: float, y1: float, e0: float, e1: float) -> float:
    """Distance from (y0, y1) >= 0, outside the axis-aligned ellipse e0 >= e1, to its boundary."""
    if y1 == 0.0:
        return y0 - e0
    if y0 == 0.0:
        return y1 - e1
    # the closest point is (e0^2 y0 / (t + e0^2), e1^2 y1 / (t + e1^2)) at the root of
    # F(t) = (e0 y0 / (t + e0^2))^2 + (e1 y1 / (t + e1^2))^2 - 1, decreasing on this bracket
    lo = -e1 * e1 + e1 * y1
    hi = -e1 * e1 + math.hypot(e0 * y0, e1 * y1)
    for _ in range(200):
        t = 0.5 * (lo + hi)
        if t in (lo, hi):
            break
        f = (e0 * y0 / (t + e0 * e0)) ** 2 + (e1 * y1 / (t + e1 * e1)) ** 2 - 1.0
        if f > 0:
            lo = t
        else:
            hi = t
    t = 0.5 * (lo + hi)
    x0 = e0 * e0 * y0 / (t + e0 * e0)
    x1 = e1 * e1 * y1 / (t + e1 * e1)
    return math.hypot(x0 - y0, x1 - y1)


def ellipses_overlap(e1: Ellipse, e2: Ellipse) -> bool:
    """Exact test of whether two filled ellipses share a point (touching counts).

    In the frame where e1 is the unit circle, e2 maps to another ellipse; the
    two overlap iff that ellipse comes within distance 1 of the origin.
    """
    if distance(e1.center, e2.center) > e1.semi_major + e2.semi_major:
        return False
    if point_in_ellipse(e1.center, e2) or point_in_ellipse(e2.center, e1):
        return True
    c = e1.to_unit(np.array([e2.center]))[0]
    dr = e2.rotation - e1.rotation
    rot = np.array([[math.cos(dr), -math.sin(dr)], [math.sin(dr), math.cos(dr)]])
    m = np.diag([1.0 / e1.semi_major, 1.0 / e1.semi_minor]) @ rot \
        @ np.diag([e2.semi_major, e2.semi_minor])
    u, axes, _ = np.linalg.svd(m)
    # origin relative to the image ellipse, in its principal frame
    y = np.abs(u.T @ -c)
    if (y[0] / axes[0]) ** 2 + (y[1] / axes[1]) ** 2 <= 1.0:
        return True
    d = _outside_point_ellipse_distance(float(y[0]), float(y[1]), float(axes[0]), float(axes[1]))
    return d <= 1.0 + _EPS


def ellipse_polygon(e: Ellipse, n: int = 64) -> list[tuple[float, float]]:
    return [tuple(p) for p in e.boundary(n)]
