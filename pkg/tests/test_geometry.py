import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import Polygon

from odrl.geometry import (
    OrientedBox,
    Polyline,
    Pose2D,
    from_frame,
    obb_intersects,
    project_onto_polyline,
    ray_box_distances,
    ray_segment_distances,
    to_frame,
    wrap_angle,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


def test_wrap_angle_boundary():
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(math.pi) == math.pi


@given(finite, finite, st.floats(-20, 20), finite, finite, st.floats(-20, 20))
def test_pose_compose_heading_normalized(x1, y1, h1, x2, y2, h2):
    p = Pose2D(x1, y1, h1).compose(Pose2D(x2, y2, h2))
    assert -math.pi < p.heading <= math.pi


def test_projection_endpoint():
    line = Polyline([(0, 0), (10, 0)])
    proj = project_onto_polyline((0, 0), line)
    assert proj.arclength == 0.0
    assert proj.lateral_offset == 0.0


def test_projection_axis_aligned():
    line = Polyline([(0, 0), (10, 0)])
    proj = project_onto_polyline((5, 2), line)
    assert proj.arclength == pytest.approx(5.0)
    assert proj.lateral_offset == pytest.approx(2.0)
    assert project_onto_polyline((5, -2), line).lateral_offset == pytest.approx(-2.0)


def test_projection_shared_vertex_tie_goes_to_lower_segment():
    line = Polyline([(0, 0), (10, 0), (10, 10)])
    # outside the corner, equidistant from both segments' shared endpoint
    proj = project_onto_polyline((12, -2), line)
    assert proj.segment_index == 0
    assert proj.arclength == pytest.approx(10.0)


def _random_polyline(rng, n=20):
    steps = rng.uniform(1.0, 6.0, size=n - 1)
    headings = np.cumsum(rng.uniform(-0.6, 0.6, size=n - 1))
    pts = np.zeros((n, 2))
    pts[1:] = np.cumsum(np.stack([steps * np.cos(headings), steps * np.sin(headings)], 1), 0)
    return Polyline(pts)


def test_projection_matches_dense_sampling_oracle():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(60):
        line = _random_polyline(rng)
        s_dense = np.linspace(0.0, line.length, 100_000)
        # oracle: explicit segment interpolation, independent of point_at
        idx = np.clip(np.searchsorted(line.cumulative_arclength, s_dense, side="right") - 1, 0, 18)
        frac = (s_dense - line.cumulative_arclength[idx]) / np.diff(line.cumulative_arclength)[idx]
        dense = line.points[idx] + (line.points[idx + 1] - line.points[idx]) * frac[:, None]
        p = rng.uniform(dense.min(0) - 5, dense.max(0) + 5)
        d = np.hypot(*(dense - p).T)
        j = int(np.argmin(d))
        proj = project_onto_polyline(p, line)
        assert abs(proj.distance - d[j]) < 1e-3
        near = np.flatnonzero(d < d[j] + 1e-3)
        # a single contiguous basin means the nearest point is unambiguous
        if np.all(np.diff(near) == 1):
            assert abs(proj.arclength - s_dense[j]) < 1e-3
            checked += 1
        assert 0.0 <= proj.arclength <= line.length
    assert checked > 40


@given(st.floats(-50, 50), st.floats(-20, 20), st.floats(0.0, 10.0))
def test_projection_monotone_along_straight_line(x, y, dx):
    line = Polyline([(0, 0), (30, 0)])
    a = project_onto_polyline((x, y), line).arclength
    b = project_onto_polyline((x + dx, y), line).arclength
    assert b >= a


def test_projection_lateral_past_end_is_perpendicular():
    line = Polyline([(0, 0), (10, 0)])
    proj = project_onto_polyline((14, 1.5), line)
    assert proj.arclength == pytest.approx(10.0)
    assert proj.lateral_offset == pytest.approx(1.5)


def test_to_frame_identity():
    pts = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert np.array_equal(to_frame(pts, Pose2D(0, 0, 0)), pts)


def test_to_frame_quarter_turn():
    out = to_frame([(1.0, 0.0)], Pose2D(0, 0, math.pi / 2))
    np.testing.assert_allclose(out, [[0.0, -1.0]], atol=1e-15)


def test_to_frame_round_trip():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        frame = Pose2D(*rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi))
        pts = rng.uniform(-100, 100, (10, 2))
        back = from_frame(to_frame(pts, frame), frame)
        worst = max(worst, float(np.abs(back - pts).max()))
    assert worst < 1e-9


@given(finite, finite, st.floats(-4, 4), st.lists(st.tuples(finite, finite), min_size=2, max_size=6))
def test_to_frame_preserves_distances(x, y, h, pts):
    pts = np.array(pts)
    out = to_frame(pts, Pose2D(x, y, h))
    d_in = np.hypot(*(pts[:, None] - pts[None]).transpose(2, 0, 1))
    d_out = np.hypot(*(out[:, None] - out[None]).transpose(2, 0, 1))
    np.testing.assert_allclose(d_out, d_in, atol=1e-9)


def test_obb_identity_and_disjoint():
    a = OrientedBox((1.0, 2.0), (0.5, 0.5), 0.3)
    assert obb_intersects(a, a)
    b = OrientedBox((101.0, 2.0), (0.5, 0.5), 0.0)
    assert not obb_intersects(a, b)


def test_obb_touching_counts():
    a = OrientedBox((0.0, 0.0), (1.0, 1.0), 0.0)
    b = OrientedBox((2.0, 0.0), (1.0, 1.0), 0.0)
    assert obb_intersects(a, b)
    c = OrientedBox((2.0 + 1e-9, 0.0), (1.0, 1.0), 0.0)
    assert not obb_intersects(a, c)


boxes = st.builds(
    OrientedBox,
    st.tuples(st.floats(-5, 5), st.floats(-5, 5)),
    st.tuples(st.floats(0.1, 3), st.floats(0.1, 3)),
    st.floats(-4, 4),
)


@given(boxes, boxes)
def test_obb_symmetric(a, b):
    assert obb_intersects(a, b) == obb_intersects(b, a)


def _box_grid(box: OrientedBox, pitch: float) -> np.ndarray:
    hl, hw = box.half_extents
    xs = np.arange(-hl, hl + pitch / 2, pitch)
    ys = np.arange(-hw, hw + pitch / 2, pitch)
    gx, gy = np.meshgrid(xs, ys)
    local = np.stack([gx.ravel(), gy.ravel()], 1)
    return from_frame(local, Pose2D(box.center[0], box.center[1], box.heading))


def _point_sampling_overlap(a: OrientedBox, b: OrientedBox, pitch=0.01) -> bool:
    """Oracle: does any grid sample of ``a`` fall inside ``b``?"""
    pts = _box_grid(a, pitch)
    local = to_frame(pts, Pose2D(b.center[0], b.center[1], b.heading))
    hl, hw = b.half_extents
    return bool(np.any((np.abs(local[:, 0]) <= hl) & (np.abs(local[:, 1]) <= hw)))


def _tangency_gap(a: OrientedBox, b: OrientedBox) -> float:
    pa, pb = Polygon(a.corners()), Polygon(b.corners())
    if pa.intersects(pb):
        return pa.intersection(pb).area / max(pa.length, pb.length)
    return pa.distance(pb)


def test_obb_matches_point_sampling_oracle():
    rng = np.random.default_rng(11)
    disagreements = 0
    for _ in range(500):
        a = OrientedBox(tuple(rng.uniform(-1, 1, 2)), tuple(rng.uniform(0.1, 1.0, 2)), rng.uniform(-math.pi, math.pi))
        b = OrientedBox(tuple(rng.uniform(-2.5, 2.5, 2)), tuple(rng.uniform(0.1, 1.0, 2)), rng.uniform(-math.pi, math.pi))
        fast = obb_intersects(a, b)
        oracle = _point_sampling_overlap(a, b) or _point_sampling_overlap(b, a)
        if fast != oracle:
            disagreements += 1
            assert _tangency_gap(a, b) < 0.02
    assert disagreements < 25


def test_ray_box_head_on():
    d = ray_box_distances(
        (0.0, 0.0), np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([[5.0, 0.0]]), np.array([[1.0, 0.5]]), np.array([0.0])
    )
    assert d[0, 0] == pytest.approx(4.0)
    assert math.isinf(d[1, 0])


def test_ray_box_inside_reports_zero():
    d = ray_box_distances((0.0, 0.0), np.array([[0.0, 1.0]]), np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]), np.array([0.3]))
    assert d[0, 0] == 0.0


def test_ray_segment_crossing():
    d = ray_segment_distances(
        (0.0, 0.0), np.array([[0.0, 1.0], [1.0, 0.0]]), np.array([[-5.0, 3.0]]), np.array([[5.0, 3.0]])
    )
    assert d[0] == pytest.approx(3.0)
    assert math.isinf(d[1])


@settings(max_examples=50)
@given(st.floats(0, 2 * math.pi), st.floats(2, 20))
def test_ray_box_matches_marching_oracle(angle, dist):
    box_center = np.array([dist * math.cos(angle), dist * math.sin(angle)])
    box = OrientedBox(tuple(box_center), (1.2, 0.7), angle * 0.7)
    direction = np.array([[math.cos(angle), math.sin(angle)]])
    t = ray_box_distances((0.0, 0.0), direction, np.array([box.center]), np.array([box.half_extents]), np.array([box.heading]))[0, 0]
    ts = np.arange(0.0, dist + 2.0, 1e-4)
    inside = box.contains(ts[:, None] * direction)
    assert abs(t - ts[np.argmax(inside)]) < 2e-4
