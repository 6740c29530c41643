"""Planar geometry: poses, frame transforms, polylines and oriented boxes.

Everything here is a pure function over immutable values. Angles are kept
in the half-open interval (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Map ``angle`` into (-pi, pi]."""
    a = math.remainder(angle, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    a = np.remainder(np.asarray(angles, dtype=float) + math.pi, TWO_PI) - math.pi
    return np.where(a <= -math.pi, a + TWO_PI, a)


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Pose ``other`` (given in this pose's frame) expressed globally."""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return Pose2D(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.heading + other.heading,
        )

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.heading), math.sin(self.heading)
        return Pose2D(-c * self.x - s * self.y, s * self.x - c * self.y, -self.heading)

    def relative_to(self, frame: "Pose2D") -> "Pose2D":
        return frame.inverse().compose(self)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 2)
    return pts


def to_frame(points, frame: Pose2D) -> np.ndarray:
    """Express global ``points`` (N x 2) in the coordinates of ``frame``."""
    pts = _as_points(points)
    c, s = math.cos(frame.heading), math.sin(frame.heading)
    dx = pts[:, 0] - frame.x
    dy = pts[:, 1] - frame.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def from_frame(points, frame: Pose2D) -> np.ndarray:
    """Inverse of :func:`to_frame`."""
    pts = _as_points(points)
    c, s = math.cos(frame.heading), math.sin(frame.heading)
    return np.stack(
        [frame.x + c * pts[:, 0] - s * pts[:, 1], frame.y + s * pts[:, 0] + c * pts[:, 1]],
        axis=1,
    )


def rotate_vectors(vectors, angle: float) -> np.ndarray:
    v = _as_points(vectors)
    c, s = math.cos(angle), math.sin(angle)
    return np.stack([c * v[:, 0] - s * v[:, 1], s * v[:, 0] + c * v[:, 1]], axis=1)


class Projection(NamedTuple):
    arclength: float
    lateral_offset: float
    segment_index: int
    distance: float


@dataclass(frozen=True, eq=False)
class Polyline:
    points: np.ndarray
    cumulative_arclength: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two (x, y) points")
        seg = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(seg <= 0.0):
            raise ValueError("polyline has repeated consecutive vertices")
        pts.setflags(write=False)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        cum.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cumulative_arclength", cum)

    def __eq__(self, other):
        return isinstance(other, Polyline) and np.array_equal(self.points, other.points)

    @property
    def length(self) -> float:
        return float(self.cumulative_arclength[-1])

    @property
    def segment_headings(self) -> np.ndarray:
        d = np.diff(self.points, axis=0)
        return np.arctan2(d[:, 1], d[:, 0])

    def _segment_at(self, s: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.cumulative_arclength, s, side="right") - 1
        return np.clip(idx, 0, len(self.points) - 2)

    def point_at(self, s) -> np.ndarray:
        """Point(s) at arclength ``s``; extrapolates linearly past either end."""
        s = np.asarray(s, dtype=float)
        idx = self._segment_at(s)
        a = self.points[idx]
        b = self.points[idx + 1]
        seg_len = self.cumulative_arclength[idx + 1] - self.cumulative_arclength[idx]
        t = (s - self.cumulative_arclength[idx]) / seg_len
        return a + (b - a) * t[..., None]

    def heading_at(self, s) -> np.ndarray:
        return self.segment_headings[self._segment_at(np.asarray(s, dtype=float))]

    def curvature_at(self, s, window: float = 2.0) -> np.ndarray:
        """Finite-difference curvature (rad/m) of the heading profile around ``s``."""
        s = np.asarray(s, dtype=float)
        dh = wrap_angles(self.heading_at(s + window) - self.heading_at(s - window))
        return dh / (2.0 * window)

    def offset(self, lateral: float) -> "Polyline":
        """Parallel curve shifted ``lateral`` metres to the left, using vertex bisectors."""
        pts = self.points
        d = np.diff(pts, axis=0)
        n = np.stack([-d[:, 1], d[:, 0]], axis=1) / np.hypot(d[:, 0], d[:, 1])[:, None]
        vn = np.empty_like(pts)
        vn[0], vn[-1] = n[0], n[-1]
        mid = n[:-1] + n[1:]
        mid /= np.hypot(mid[:, 0], mid[:, 1])[:, None]
        cos_half = np.sum(mid * n[1:], axis=1)
        vn[1:-1] = mid / np.maximum(cos_half, 0.2)[:, None]
        return Polyline(pts + lateral * vn)


def project_onto_polyline(p, line: Polyline) -> Projection:
    """Nearest-point projection of ``p`` onto ``line``.

    Ties between segments go to the lower segment index. Beyond either end
    of the line the lateral offset is measured perpendicular to the end
    segment's supporting line, so a point just past the last vertex reports
    its sideways displacement rather than its distance to the vertex.
    """
    p = np.asarray(p, dtype=float).reshape(2)
    a = line.points[:-1]
    b = line.points[1:]
    d = b - a
    seg_len2 = np.einsum("ij,ij->i", d, d)
    w = p - a
    t_raw = np.einsum("ij,ij->i", w, d) / seg_len2
    t = np.clip(t_raw, 0.0, 1.0)
    q = a + d * t[:, None]
    # exact vertices so that shared corners tie bit-for-bit
    q = np.where((t == 1.0)[:, None], b, q)
    q = np.where((t == 0.0)[:, None], a, q)
    diff = p - q
    dist2 = np.einsum("ij,ij->i", diff, diff)
    i = int(np.argmin(dist2))
    seg_len = math.sqrt(seg_len2[i])
    s = float(line.cumulative_arclength[i] + t[i] * seg_len)
    cross = (d[i, 0] * diff[i, 1] - d[i, 1] * diff[i, 0]) / seg_len
    dist = math.sqrt(dist2[i])
    last = len(d) - 1
    if (i == 0 and t_raw[i] < 0.0) or (i == last and t_raw[i] > 1.0):
        lateral = (d[i, 0] * w[i, 1] - d[i, 1] * w[i, 0]) / seg_len
    else:
        lateral = math.copysign(dist, cross) if cross != 0.0 else 0.0
    return Projection(s, float(lateral), i, dist)


@dataclass(frozen=True)
class OrientedBox:
    center: tuple[float, float]
    half_extents: tuple[float, float]
    heading: float = 0.0

    def __post_init__(self):
        cx, cy = self.center
        hl, hw = self.half_extents
        if not (hl > 0.0 and hw > 0.0):
            raise ValueError("box half extents must be strictly positive")
        object.__setattr__(self, "center", (float(cx), float(cy)))
        object.__setattr__(self, "half_extents", (float(hl), float(hw)))
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    @classmethod
    def at_pose(cls, pose: Pose2D, half_extents) -> "OrientedBox":
        return cls((pose.x, pose.y), tuple(half_extents), pose.heading)

    def axes(self) -> np.ndarray:
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([[c, s], [-s, c]])

    def corners(self) -> np.ndarray:
        hl, hw = self.half_extents
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return from_frame(local, Pose2D(self.center[0], self.center[1], self.heading))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        local = to_frame(points, Pose2D(self.center[0], self.center[1], self.heading))
        hl, hw = self.half_extents
        return (np.abs(local[:, 0]) <= hl + tol) & (np.abs(local[:, 1]) <= hw + tol)


def obb_intersects(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis overlap test; touching boxes count as intersecting."""
    delta = np.subtract(b.center, a.center)
    axes_a = a.axes()
    axes_b = b.axes()
    ha = np.asarray(a.half_extents)
    hb = np.asarray(b.half_extents)
    for axis in (axes_a[0], axes_a[1], axes_b[0], axes_b[1]):
        ra = np.sum(ha * np.abs(axes_a @ axis))
        rb = np.sum(hb * np.abs(axes_b @ axis))
        if abs(float(delta @ axis)) > ra + rb:
            return False
    return True


def boxes_to_arrays(boxes) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if not boxes:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    centers = np.array([b.center for b in boxes], dtype=float)
    halves = np.array([b.half_extents for b in boxes], dtype=float)
    headings = np.array([b.heading for b in boxes], dtype=float)
    return centers, halves, headings


def ray_box_distances(origin, directions: np.ndarray, centers, halves, headings) -> np.ndarray:
    """Entry distance of each ray against each box (R x B), ``inf`` on a miss.

    ``directions`` are unit vectors (R x 2). A ray starting inside a box
    reports distance 0.
    """
    directions = np.asarray(directions, dtype=float)
    n_rays, n_boxes = len(directions), len(centers)
    if n_boxes == 0:
        return np.full((n_rays, 0), np.inf)
    c = np.cos(headings)
    s = np.sin(headings)
    rel = np.asarray(origin, dtype=float) - centers
    # origin and directions in each box frame
    ox = c * rel[:, 0] + s * rel[:, 1]
    oy = -s * rel[:, 0] + c * rel[:, 1]
    dx = directions[:, 0:1] * c + directions[:, 1:2] * s
    dy = -directions[:, 0:1] * s + directions[:, 1:2] * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t1x = (-halves[:, 0] - ox) / dx
        t2x = (halves[:, 0] - ox) / dx
        t1y = (-halves[:, 1] - oy) / dy
        t2y = (halves[:, 1] - oy) / dy
    inside_x = np.abs(ox) <= halves[:, 0]
    inside_y = np.abs(oy) <= halves[:, 1]
    par_x = dx == 0.0
    par_y = dy == 0.0
    lo_x = np.where(par_x, np.where(inside_x, -np.inf, np.inf), np.minimum(t1x, t2x))
    hi_x = np.where(par_x, np.where(inside_x, np.inf, -np.inf), np.maximum(t1x, t2x))
    lo_y = np.where(par_y, np.where(inside_y, -np.inf, np.inf), np.minimum(t1y, t2y))
    hi_y = np.where(par_y, np.where(inside_y, np.inf, -np.inf), np.maximum(t1y, t2y))
    t_enter = np.maximum(lo_x, lo_y)
    t_exit = np.minimum(hi_x, hi_y)
    hit = (t_enter <= t_exit) & (t_exit >= 0.0)
    return np.where(hit, np.maximum(t_enter, 0.0), np.inf)


def ray_segment_distances(origin, directions: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distance along each ray to its nearest crossing of any segment (R,), ``inf`` on a miss."""
    directions = np.asarray(directions, dtype=float)
    if len(seg_a) == 0:
        return np.full(len(directions), np.inf)
    e = seg_b - seg_a  # (S, 2)
    w = seg_a - np.asarray(origin, dtype=float)  # (S, 2)
    dx = directions[:, 0:1]
    dy = directions[:, 1:2]
    denom = dx * e[:, 1] - dy * e[:, 0]  # (R, S)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
        u = (w[:, 0] * dy - w[:, 1] * dx) / denom
    # a hair of slack so rays through a shared vertex cannot slip between segments
    ok = (denom != 0.0) & (t >= 0.0) & (u >= -1e-12) & (u <= 1.0 + 1e-12)
    return np.where(ok, t, np.inf).min(axis=1)
