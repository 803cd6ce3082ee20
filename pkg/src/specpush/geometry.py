"""Planar shapes, poses and exact pairwise distance queries.

Shapes are circles or strictly convex CCW polygons. All pairwise queries
return the signed distance (negative when overlapping) together with a
witness point on each body and a unit normal pointing from body B into
body A. The array-level kernels are compiled with numba and shared with
the simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from numba import njit

KIND_CIRCLE = 0
KIND_POLYGON = 1


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise GeometryError(f"pose fields must be finite, got {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)


@dataclass(frozen=True)
class Circle:
    radius: float

    def __post_init__(self):
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise GeometryError("circle radius must be positive")

    @property
    def bounding_radius(self) -> float:
        return self.radius

    @property
    def perimeter(self) -> float:
        return 2.0 * math.pi * self.radius


@dataclass(frozen=True)
class ConvexPolygon:
    """Counter-clockwise, strictly convex vertex loop in the body frame."""

    vertices: tuple

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        object.__setattr__(self, "vertices", verts)
        n = len(verts)
        if n < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        if not all(math.isfinite(c) for v in verts for c in v):
            raise GeometryError("polygon vertices must be finite")
        for i in range(n):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % n]
            cx, cy = verts[(i + 2) % n]
            cross = (bx - ax) * (cy - by) - (by - ay) * (cx - bx)
            if cross <= 1e-15:
                raise GeometryError("polygon must be strictly convex with CCW winding")

    @classmethod
    def box(cls, width: float, height: float, center=(0.0, 0.0)) -> "ConvexPolygon":
        if width <= 0 or height <= 0:
            raise GeometryError("box dimensions must be positive")
        cx, cy = center
        hw, hh = 0.5 * width, 0.5 * height
        return cls(((cx - hw, cy - hh), (cx + hw, cy - hh), (cx + hw, cy + hh), (cx - hw, cy + hh)))

    def array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=np.float64)

    @property
    def bounding_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.array(), axis=1)))

    @property
    def perimeter(self) -> float:
        v = self.array()
        return float(np.sum(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)))


Shape = Union[Circle, ConvexPolygon]


def uniform_inertia(shape: Shape, mass: float) -> float:
    """Moment of inertia about the body origin for uniform areal density."""
    if isinstance(shape, Circle):
        return 0.5 * mass * shape.radius ** 2
    v = shape.array()
    w = np.roll(v, -1, axis=0)
    cross = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
    area = 0.5 * cross.sum()
    second = np.sum(cross * (v[:, 0] ** 2 + v[:, 0] * w[:, 0] + w[:, 0] ** 2 + v[:, 1] ** 2 + v[:, 1] * w[:, 1] + w[:, 1] ** 2)) / 12.0
    return float(mass * second / area)


@dataclass(frozen=True)
class ContactQuery:
    witness_a: np.ndarray
    witness_b: np.ndarray
    normal: np.ndarray
    signed_distance: float


# ---------------------------------------------------------------------------
# numba kernels. Polygons are (n, 2) float arrays already in the world frame.


@njit(cache=True, nogil=True)
def rot_apply(theta, px, py):
    c = math.cos(theta)
    s = math.sin(theta)
    return c * px - s * py, s * px + c * py


@njit(cache=True, nogil=True)
def world_vertices(verts, x, y, theta, out):
    c = math.cos(theta)
    s = math.sin(theta)
    for i in range(verts.shape[0]):
        out[i, 0] = x + c * verts[i, 0] - s * verts[i, 1]
        out[i, 1] = y + s * verts[i, 0] + c * verts[i, 1]


@njit(cache=True, nogil=True)
def closest_on_segment(px, py, ax, ay, bx, by):
    ex = bx - ax
    ey = by - ay
    ll = ex * ex + ey * ey
    t = ((px - ax) * ex + (py - ay) * ey) / ll
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return ax + t * ex, ay + t * ey


@njit(cache=True, nogil=True)
def point_polygon(px, py, poly, n):
    """Signed distance of a point to a polygon boundary.

    Returns (sd, cx, cy, nx, ny): closest boundary point and the outward
    direction from the polygon towards the point.
    """
    # face separation test; max over faces is the depth when inside
    best = -1e300
    bi = 0
    for i in range(n):
        ax = poly[i, 0]
        ay = poly[i, 1]
        j = i + 1 if i + 1 < n else 0
        ex = poly[j, 0] - ax
        ey = poly[j, 1] - ay
        el = math.sqrt(ex * ex + ey * ey)
        fnx = ey / el
        fny = -ex / el
        s = fnx * (px - ax) + fny * (py - ay)
        if s > best:
            best = s
            bi = i
    if best <= 0.0:
        ax = poly[bi, 0]
        ay = poly[bi, 1]
        j = bi + 1 if bi + 1 < n else 0
        ex = poly[j, 0] - ax
        ey = poly[j, 1] - ay
        el = math.sqrt(ex * ex + ey * ey)
        fnx = ey / el
        fny = -ex / el
        return best, px - best * fnx, py - best * fny, fnx, fny
    dmin = 1e300
    cx = 0.0
    cy = 0.0
    for i in range(n):
        j = i + 1 if i + 1 < n else 0
        qx, qy = closest_on_segment(px, py, poly[i, 0], poly[i, 1], poly[j, 0], poly[j, 1])
        d = (px - qx) * (px - qx) + (py - qy) * (py - qy)
        if d < dmin:
            dmin = d
            cx = qx
            cy = qy
    d = math.sqrt(dmin)
    if d < best or d == 0.0:
        # squared distance underflowed; the face normal is exact here
        ax = poly[bi, 0]
        ay = poly[bi, 1]
        j = bi + 1 if bi + 1 < n else 0
        ex = poly[j, 0] - ax
        ey = poly[j, 1] - ay
        el = math.sqrt(ex * ex + ey * ey)
        return best, px - best * ey / el, py + best * ex / el, ey / el, -ex / el
    return d, cx, cy, (px - cx) / d, (py - cy) / d


@njit(cache=True, nogil=True)
def circle_circle(ax, ay, ra, bx, by, rb):
    """(sd, wax, way, wbx, wby, nx, ny) with normal from B into A."""
    dx = ax - bx
    dy = ay - by
    d = math.sqrt(dx * dx + dy * dy)
    if d > 0.0:
        nx = dx / d
        ny = dy / d
    else:
        nx = 0.0
        ny = 1.0
    return d - ra - rb, ax - ra * nx, ay - ra * ny, bx + rb * nx, by + rb * ny, nx, ny


@njit(cache=True, nogil=True)
def circle_polygon(cx, cy, r, poly, n):
    """Circle A against polygon B; normal from B into A."""
    sd, qx, qy, nx, ny = point_polygon(cx, cy, poly, n)
    return sd - r, cx - r * nx, cy - r * ny, qx, qy, nx, ny


@njit(cache=True, nogil=True)
def polygon_polygon(pa, na, pb, nb):
    """Exact signed distance between convex polygons A and B."""
    # SAT over face normals of both; also gives penetration depth
    best = -1e300
    owner = 0
    face = 0
    deep = 0
    for side in range(2):
        if side == 0:
            p = pa
            n = na
            o = pb
            no = nb
        else:
            p = pb
            n = nb
            o = pa
            no = na
        for i in range(n):
            j = i + 1 if i + 1 < n else 0
            ex = p[j, 0] - p[i, 0]
            ey = p[j, 1] - p[i, 1]
            el = math.sqrt(ex * ex + ey * ey)
            fnx = ey / el
            fny = -ex / el
            smin = 1e300
            kmin = 0
            for k in range(no):
                s = fnx * (o[k, 0] - p[i, 0]) + fny * (o[k, 1] - p[i, 1])
                if s < smin:
                    smin = s
                    kmin = k
            if smin > best:
                best = smin
                owner = side
                face = i
                deep = kmin
    if best <= 0.0:
        if owner == 0:
            j = face + 1 if face + 1 < na else 0
            ex = pa[j, 0] - pa[face, 0]
            ey = pa[j, 1] - pa[face, 1]
            el = math.sqrt(ex * ex + ey * ey)
            fnx = ey / el
            fny = -ex / el
            wbx = pb[deep, 0]
            wby = pb[deep, 1]
            return best, wbx - best * fnx, wby - best * fny, wbx, wby, -fnx, -fny
        j = face + 1 if face + 1 < nb else 0
        ex = pb[j, 0] - pb[face, 0]
        ey = pb[j, 1] - pb[face, 1]
        el = math.sqrt(ex * ex + ey * ey)
        fnx = ey / el
        fny = -ex / el
        wax = pa[deep, 0]
        way = pa[deep, 1]
        return best, wax, way, wax - best * fnx, way - best * fny, fnx, fny
    # separated: minimum over vertex-edge pairs in both directions
    dmin = 1e300
    wax = 0.0
    way = 0.0
    wbx = 0.0
    wby = 0.0
    for k in range(na):
        for i in range(nb):
            j = i + 1 if i + 1 < nb else 0
            qx, qy = closest_on_segment(pa[k, 0], pa[k, 1], pb[i, 0], pb[i, 1], pb[j, 0], pb[j, 1])
            d = (pa[k, 0] - qx) ** 2 + (pa[k, 1] - qy) ** 2
            if d < dmin:
                dmin = d
                wax = pa[k, 0]
                way = pa[k, 1]
                wbx = qx
                wby = qy
    for k in range(nb):
        for i in range(na):
            j = i + 1 if i + 1 < na else 0
            qx, qy = closest_on_segment(pb[k, 0], pb[k, 1], pa[i, 0], pa[i, 1], pa[j, 0], pa[j, 1])
            d = (pb[k, 0] - qx) ** 2 + (pb[k, 1] - qy) ** 2
            if d < dmin:
                dmin = d
                wax = qx
                way = qy
                wbx = pb[k, 0]
                wby = pb[k, 1]
    d = math.sqrt(dmin)
    if d < best or d == 0.0:
        # squared distance underflowed; fall back to the separating face
        if owner == 0:
            j = face + 1 if face + 1 < na else 0
            ex = pa[j, 0] - pa[face, 0]
            ey = pa[j, 1] - pa[face, 1]
            el = math.sqrt(ex * ex + ey * ey)
            wbx = pb[deep, 0]
            wby = pb[deep, 1]
            return best, wbx - best * ey / el, wby + best * ex / el, wbx, wby, -ey / el, ex / el
        j = face + 1 if face + 1 < nb else 0
        ex = pb[j, 0] - pb[face, 0]
        ey = pb[j, 1] - pb[face, 1]
        el = math.sqrt(ex * ex + ey * ey)
        wax = pa[deep, 0]
        way = pa[deep, 1]
        return best, wax, way, wax - best * ey / el, way + best * ex / el, ey / el, -ex / el
    return d, wax, way, wbx, wby, (wax - wbx) / d, (way - wby) / d


# ---------------------------------------------------------------------------
# Python-level API


def transform_point(pose: Pose2, p_body) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    px, py = float(p_body[0]), float(p_body[1])
    return np.array([pose.x + c * px - s * py, pose.y + s * px + c * py])


def inverse_transform_point(pose: Pose2, p_world) -> np.ndarray:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    dx, dy = float(p_world[0]) - pose.x, float(p_world[1]) - pose.y
    return np.array([c * dx + s * dy, -s * dx + c * dy])


def rotate(theta: float, v) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def polygon_world(shape: ConvexPolygon, pose: Pose2) -> np.ndarray:
    out = np.empty((len(shape.vertices), 2))
    world_vertices(shape.array(), pose.x, pose.y, pose.theta, out)
    return out


def signed_distance(shape_a: Shape, pose_a: Pose2, shape_b: Shape, pose_b: Pose2) -> ContactQuery:
    """Minimum signed distance between two posed shapes.

    The normal points from B into A; negative distance means overlap, in
    which case the witnesses realize the minimum translation along a face
    normal.
    """
    a_circle = isinstance(shape_a, Circle)
    b_circle = isinstance(shape_b, Circle)
    if a_circle and b_circle:
        res = circle_circle(pose_a.x, pose_a.y, shape_a.radius, pose_b.x, pose_b.y, shape_b.radius)
    elif a_circle:
        pb = polygon_world(shape_b, pose_b)
        res = circle_polygon(pose_a.x, pose_a.y, shape_a.radius, pb, pb.shape[0])
    elif b_circle:
        pa = polygon_world(shape_a, pose_a)
        sd, wbx, wby, wax, way, nx, ny = circle_polygon(pose_b.x, pose_b.y, shape_b.radius, pa, pa.shape[0])
        res = (sd, wax, way, wbx, wby, -nx, -ny)
    else:
        pa = polygon_world(shape_a, pose_a)
        pb = polygon_world(shape_b, pose_b)
        res = polygon_polygon(pa, pa.shape[0], pb, pb.shape[0])
    sd, wax, way, wbx, wby, nx, ny = res
    return ContactQuery(np.array([wax, way]), np.array([wbx, wby]), np.array([nx, ny]), float(sd))


def sample_surface_point(shape: Shape, u: float) -> tuple[np.ndarray, np.ndarray]:
    """Arc-length parameterized boundary point and outward normal (body frame).

    ``u = 0`` is the first vertex (polygons) or angle zero (circles); the
    boundary is traversed counter-clockwise.
    """
    if not 0.0 <= u < 1.0:
        raise ValueError("u must lie in [0, 1)")
    if isinstance(shape, Circle):
        a = 2.0 * math.pi * u
        n = np.array([math.cos(a), math.sin(a)])
        return shape.radius * n, n
    v = shape.array()
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(edges, axis=1)
    target = u * lengths.sum()
    i = int(np.searchsorted(np.cumsum(lengths), target, side="right"))
    i = min(i, len(lengths) - 1)
    start = float(np.sum(lengths[:i]))
    t = (target - start) / lengths[i]
    point = v[i] + t * edges[i]
    normal = np.array([edges[i, 1], -edges[i, 0]]) / lengths[i]
    return point, normal
