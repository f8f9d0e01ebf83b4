import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riskmpcc.errors import InvalidInputError
from riskmpcc.geometry import angle_diff
from riskmpcc.reference_path import from_polyline


def quarter_circle(radius=10.0, step_deg=1.0):
    a = np.radians(np.arange(0.0, 90.0 + 1e-9, step_deg))
    return np.column_stack((radius * np.sin(a), radius * (1 - np.cos(a))))


S_CURVE = [(0, 0), (10, 0), (20, 5), (30, 5), (35, 15), (30, 25)]


def test_straight_path_has_zero_heading():
    path = from_polyline([(0, 0), (3, 0), (7, 0), (12.3, 0)])
    assert path.total_length == pytest.approx(12.3, abs=1e-9)
    theta = np.linspace(0, path.total_length, 97)
    _, y, phi = path.sample_many(theta)
    assert np.allclose(phi, 0.0, atol=1e-12)
    assert np.allclose(y, 0.0, atol=1e-12)


def test_quarter_circle_length():
    path = from_polyline(quarter_circle())
    assert abs(path.total_length - 5 * math.pi) / (5 * math.pi) < 0.005


def test_two_points_is_a_chord():
    path = from_polyline([(1.0, 1.0), (4.0, 5.0)], resample_step=0.5)
    assert path.total_length == pytest.approx(5.0)
    assert np.allclose(path.headings, math.atan2(4, 3))


def test_knots_start_at_zero_and_increase():
    path = from_polyline(S_CURVE)
    assert path.knots[0] == 0.0
    assert np.all(np.diff(path.knots) > 0)
    # knots sit every 0.5 m of spline arc, so chords are a hair shorter on curves
    gaps = np.diff(path.knots)[:-1]
    assert np.all((gaps <= 0.5 + 1e-9) & (gaps > 0.499))


@pytest.mark.parametrize("points, step", [([(0, 0)], 0.5), ([(0, 0), (0, 0), (1, 0)], 0.5),
                                          ([(0, 0), (1, 0)], 0.0), ([(0, 0), (math.inf, 0)], 0.5)])
def test_from_polyline_rejects(points, step):
    with pytest.raises(InvalidInputError):
        from_polyline(points, step)


def test_sample_endpoints_and_midpoint():
    path = from_polyline(S_CURVE)
    assert path.sample(0.0)[:2] == (path.positions[0][0], path.positions[0][1])
    x, y, _ = path.sample(path.total_length)
    assert (x, y) == tuple(path.positions[-1])
    straight = from_polyline([(0, 0), (8, 6)])
    x, y, _ = straight.sample(straight.total_length / 2)
    assert (x, y) == pytest.approx((4.0, 3.0), abs=1e-12)


def test_sample_clamps_with_flag():
    path = from_polyline([(0, 0), (10, 0)])
    assert path.sample_with_flag(-1.0) == (0.0, 0.0, 0.0, True)
    assert path.sample_with_flag(12.0)[3] is True
    assert path.sample_with_flag(5.0)[3] is False
    with pytest.raises(InvalidInputError):
        path.sample(math.nan)


def test_heading_interpolation_takes_short_way_across_pi():
    # heading passes from just below +pi to just above -pi
    path = from_polyline([(0, 0.0), (-5, 0.2), (-10, -0.2)], resample_step=0.5)
    phi = path.sample_many(np.linspace(0, path.total_length, 400))[2]
    steps = np.abs(angle_diff(phi[1:], phi[:-1]))
    assert steps.max() < 0.2


def test_finite_difference_tangent_matches_heading():
    path = from_polyline(S_CURVE)
    rng = np.random.default_rng(0)
    theta = rng.uniform(0.01, path.total_length - 0.01, 2000)
    # stay clear of knots
    gap = np.abs(theta[:, None] - path.knots[None, :]).min(axis=1)
    theta = theta[gap > 2e-3]
    h = 1e-4
    xa, ya, _ = path.sample_many(theta - h)
    xb, yb, _ = path.sample_many(theta + h)
    fd = np.arctan2(yb - ya, xb - xa)
    phi = path.sample_many(theta)[2]
    assert np.max(np.abs(angle_diff(fd, phi))) < 1e-3


def test_project_on_knot_and_lateral_offset():
    path = from_polyline(S_CURVE)
    j = 17
    assert path.project(*path.positions[j]) == pytest.approx(path.knots[j], abs=1e-9)
    straight = from_polyline([(0, 0), (20, 0)])
    assert straight.project(7.0, 1.0) == pytest.approx(7.0, abs=1e-6)
    assert straight.project(7.0, -1.0, hint_theta=6.0) == pytest.approx(7.0, abs=1e-6)


def test_project_matches_dense_oracle():
    path = from_polyline(S_CURVE)
    dense_theta = np.arange(0.0, path.total_length, 1e-3)
    dx, dy, _ = path.sample_many(dense_theta)
    rng = np.random.default_rng(3)
    for _ in range(200):
        q = rng.uniform((-2, -3), (37, 27))
        got = path.project(*q)
        want = dense_theta[np.argmin(np.hypot(dx - q[0], dy - q[1]))]
        # equidistant points may snap to a different branch, so compare distances too
        dist_got = math.hypot(*(np.array(path.sample(got)[:2]) - q))
        dist_want = math.hypot(*(np.array(path.sample(want)[:2]) - q))
        assert dist_got <= dist_want + 1e-6
        if abs(got - want) > 0.5:
            assert abs(dist_got - dist_want) < 1e-3


def test_hint_window_avoids_far_branch():
    # a hairpin whose two legs are 3 m apart
    path = from_polyline([(0, 0), (30, 0), (33, 1.5), (30, 3), (0, 3)])
    near_return_leg = path.project(10.0, 2.0)
    assert near_return_leg > 30.0
    hinted = path.project(10.0, 2.0, hint_theta=9.0, window=10.0)
    dense = np.arange(0.0, 19.0, 1e-3)
    dx, dy, _ = path.sample_many(dense)
    assert hinted == pytest.approx(dense[np.argmin(np.hypot(dx - 10.0, dy - 2.0))], abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0))
def test_project_inverts_sample(frac):
    path = from_polyline(S_CURVE)
    theta = frac * path.total_length
    x, y, _ = path.sample(theta)
    assert abs(path.project(x, y) - theta) <= 0.5
