"""Convex polygon kernel on the floor plane: hull, area, clipping, IoU."""

from __future__ import annotations

from typing import Iterable, Optional

import numpy as np

EPS_AREA = 1e-8
DUP_TOL = 1e-12


class PolygonError(ValueError):
    pass


class CollinearInput(PolygonError):
    pass


def signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _dedupe(vertices: np.ndarray, tol: float = DUP_TOL) -> np.ndarray:
    if len(vertices) == 0:
        return vertices
    keep = [vertices[0]]
    for v in vertices[1:]:
        if np.max(np.abs(v - keep[-1])) > tol:
            keep.append(v)
    if len(keep) > 1 and np.max(np.abs(keep[0] - keep[-1])) <= tol:
        keep.pop()
    return np.array(keep)


class FloorPolygon:
    """Convex, counterclockwise polygon in floor meters.

    ``source`` carries provenance (e.g. the observation a footprint came from)
    and plays no part in the geometry.
    """

    __slots__ = ("vertices", "source", "_area", "_aabb", "_points")

    def __init__(self, vertices, source=None, validate: bool = True):
        verts = np.array(vertices, dtype=float).reshape(-1, 2)
        if validate:
            _validate(verts)
        verts.setflags(write=False)
        self.vertices = verts
        self.source = source
        self._area = None
        self._aabb = None
        self._points = None

    @property
    def points(self) -> list[tuple[float, float]]:
        """Vertices as a list of float tuples."""
        if self._points is None:
            self._points = [tuple(v) for v in self.vertices.tolist()]
        return self._points

    @property
    def area(self) -> float:
        if self._area is None:
            self._area = _shoelace(self.points)
        return self._area

    @property
    def aabb(self) -> tuple[float, float, float, float]:
        if self._aabb is None:
            xs = [v[0] for v in self.points]
            ys = [v[1] for v in self.points]
            self._aabb = (min(xs), min(ys), max(xs), max(ys))
        return self._aabb

    @property
    def centroid(self) -> np.ndarray:
        v = self.vertices
        nxt = np.roll(v, -1, axis=0)
        cross = v[:, 0] * nxt[:, 1] - nxt[:, 0] * v[:, 1]
        a = cross.sum() / 2.0
        return ((v + nxt) * cross[:, None]).sum(axis=0) / (6.0 * a)

    def translated(self, offset) -> "FloorPolygon":
        return FloorPolygon(self.vertices + np.asarray(offset, dtype=float), self.source, validate=False)

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"FloorPolygon({self.vertices.tolist()!r}, source={self.source!r})"


def _validate(verts: np.ndarray) -> None:
    if len(verts) < 3:
        raise PolygonError(f"polygon needs at least 3 vertices, got {len(verts)}")
    if not np.all(np.isfinite(verts)):
        raise PolygonError("non-finite vertex")
    diffs = np.abs(np.roll(verts, -1, axis=0) - verts).max(axis=1)
    if np.any(diffs <= DUP_TOL):
        raise PolygonError("duplicate consecutive vertices")
    if not signed_area(verts) > 0:
        raise PolygonError("polygon must be counterclockwise with positive area")
    edges = np.roll(verts, -1, axis=0) - verts
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    scale = np.abs(edges).max() ** 2
    if np.any(cross < -1e-12 * scale):
        raise PolygonError("polygon is not convex")


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable, source=None) -> FloorPolygon:
    """Andrew's monotone chain; collinear points on the boundary are dropped."""
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if len(pts) < 3:
        raise CollinearInput(f"need at least 3 distinct points, got {len(pts)}")
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise CollinearInput("all points are collinear")
    verts = _dedupe(np.array(hull))
    if len(verts) < 3 or not signed_area(verts) > 0:
        raise CollinearInput("points span no area")
    return FloorPolygon(verts, source, validate=False)


def area(p: FloorPolygon) -> float:
    return p.area


def _clip_lists(subject: list, clipper: list) -> list:
    # plain floats: these polygons have a handful of vertices, so numpy
    # call overhead would dominate
    out = subject
    n = len(clipper)
    for k in range(n):
        if not out:
            break
        ax, ay = clipper[k]
        bx, by = clipper[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        # signed distance (scaled) of each vertex to the left of edge a->b
        side = [ex * (py - ay) - ey * (px - ax) for px, py in out]
        if min(side) >= 0:
            continue
        if max(side) < 0:
            return []
        res = []
        m = len(out)
        for i in range(m):
            p, sp = out[i], side[i]
            q, sq = out[(i + 1) % m], side[(i + 1) % m]
            if sp >= 0:
                res.append(p)
            if (sp >= 0) != (sq >= 0):
                t = sp / (sp - sq)
                res.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
        out = res
    return out


def _clip(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex subject by a convex CCW clipper."""
    res = _clip_lists([tuple(v) for v in np.asarray(subject, float).tolist()],
                      [tuple(v) for v in np.asarray(clipper, float).tolist()])
    return np.array(res) if res else np.empty((0, 2))


def _dedupe_list(pts: list, tol: float = DUP_TOL) -> list:
    if not pts:
        return pts
    keep = [pts[0]]
    for v in pts[1:]:
        if max(abs(v[0] - keep[-1][0]), abs(v[1] - keep[-1][1])) > tol:
            keep.append(v)
    if len(keep) > 1 and max(abs(keep[0][0] - keep[-1][0]), abs(keep[0][1] - keep[-1][1])) <= tol:
        keep.pop()
    return keep


def _shoelace(pts: list) -> float:
    s = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def intersect(a: FloorPolygon, b: FloorPolygon) -> Optional[FloorPolygon]:
    """Intersection of two convex polygons, or ``None`` when it is empty.

    Slivers with area below ``EPS_AREA`` count as empty.
    """
    ax0, ay0, ax1, ay1 = a.aabb
    bx0, by0, bx1, by1 = b.aabb
    if ax0 > bx1 or bx0 > ax1 or ay0 > by1 or by0 > ay1:
        return None
    verts = _dedupe_list(_clip_lists(a.points, b.points))
    if len(verts) < 3:
        return None
    if not _shoelace(verts) >= EPS_AREA:
        return None
    return FloorPolygon(verts, validate=False)


def overlap_area(a: FloorPolygon, b: FloorPolygon) -> float:
    inter = intersect(a, b)
    return 0.0 if inter is None else inter.area


def iou(a: FloorPolygon, b: FloorPolygon) -> float:
    ov = overlap_area(a, b)
    if ov == 0.0:
        return 0.0
    return min(1.0, ov / (a.area + b.area - ov))


def contains_point(p: FloorPolygon, pt, tol: float = 0.0) -> bool:
    """True when ``pt`` is inside or on the boundary (within ``tol`` meters)."""
    v = p.vertices
    e = np.roll(v, -1, axis=0) - v
    rel = np.asarray(pt, dtype=float) - v
    cross = e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0]
    lengths = np.hypot(e[:, 0], e[:, 1])
    return bool(np.all(cross >= -tol * lengths))


def distance_to_point(p: FloorPolygon, pt) -> float:
    """Euclidean distance from ``pt`` to the polygon; 0 when inside."""
    pt = np.asarray(pt, dtype=float)
    if contains_point(p, pt):
        return 0.0
    v = p.vertices
    w = np.roll(v, -1, axis=0)
    seg = w - v
    t = np.clip(((pt - v) * seg).sum(axis=1) / (seg * seg).sum(axis=1), 0.0, 1.0)
    closest = v + t[:, None] * seg
    return float(np.min(np.hypot(*(closest - pt).T)))
