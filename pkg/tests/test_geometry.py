import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probepose.geometry import (Pose, Rotation, Twist, integrate_twist, pose_errors, quat_multiply,
                                read_pose_csv, rotation_angle_between, se3_exp, se3_log, slerp, so3_exp,
                                so3_log, write_pose_csv)

vec = st.lists(st.floats(-3.0, 3.0, allow_nan=False), min_size=3, max_size=3).map(np.array)
small = st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=3, max_size=3).map(np.array)


def test_hamilton_product():
    i = np.array([0.0, 1, 0, 0])
    j = np.array([0.0, 0, 1, 0])
    assert np.allclose(quat_multiply(i, j), [0, 0, 0, 1])
    assert np.allclose(quat_multiply(j, i), [0, 0, 0, -1])


def test_rotation_matches_matrix_product():
    a = Rotation.from_axis_angle([0.3, -0.2, 0.5])
    b = Rotation.from_axis_angle([-1.0, 0.4, 0.1])
    assert np.allclose((a * b).matrix, a.matrix @ b.matrix, atol=1e-14)


@given(vec)
def test_axis_angle_round_trip(v):
    theta = np.linalg.norm(v)
    if theta > math.pi - 1e-6:
        return
    assert np.allclose(Rotation.from_axis_angle(v).as_axis_angle(), v, atol=1e-9)


def test_axis_angle_at_pi():
    r = Rotation.from_axis_angle([math.pi, 0, 0])
    assert np.isclose(np.linalg.norm(r.as_axis_angle()), math.pi)
    assert np.allclose(so3_exp(so3_log(r.matrix)), r.matrix, atol=1e-9)


@given(small, small)
@settings(max_examples=50)
def test_se3_exp_log_round_trip(rho, phi):
    xi = np.concatenate([rho, phi])
    assert np.allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)


def test_pose_inverse_and_composition():
    p = Pose(Rotation.from_axis_angle([0.1, 0.2, 0.3]), [1.0, -2.0, 0.5])
    e = p @ p.inverse()
    assert np.allclose(e.as_matrix(), np.eye(4), atol=1e-12)
    x = np.array([0.3, 0.1, -0.7])
    assert np.allclose((p @ p).apply(x), p.apply(p.apply(x)))


def test_slerp_endpoints_and_midpoint():
    a = Rotation.identity()
    b = Rotation.from_axis_angle([0, 0, 1.0])
    assert np.allclose(slerp(a, b, 0).q, a.q)
    assert np.allclose(slerp(a, b, 1).q, b.q)
    assert np.isclose(rotation_angle_between(a, slerp(a, b, 0.5)), 0.5)
    with pytest.raises(ValueError):
        slerp(a, b, 1.5)


def test_slerp_takes_short_arc():
    a = Rotation.identity()
    b = Rotation(-Rotation.from_axis_angle([0, 0, 0.4]).q)
    assert np.isclose(rotation_angle_between(a, slerp(a, b, 0.5)), 0.2)


def test_integrate_twist_is_body_frame():
    p = Pose(Rotation.from_axis_angle([0, 0, math.pi / 2]), [1.0, 0, 0])
    q = integrate_twist(p, Twist([1.0, 0, 0], [0, 0, 0]), 0.5)
    assert np.allclose(q.translation, [1.0, 0.5, 0])
    with pytest.raises(ValueError):
        integrate_twist(p, Twist.zero(), 0.0)


def test_rpy_convention():
    r = Rotation.from_rpy(0.1, 0.2, 0.3)
    rx = Rotation.from_axis_angle([0.1, 0, 0]).matrix
    ry = Rotation.from_axis_angle([0, 0.2, 0]).matrix
    rz = Rotation.from_axis_angle([0, 0, 0.3]).matrix
    assert np.allclose(r.matrix, rx @ ry @ rz)


def test_pose_errors():
    a = Pose(Rotation.identity(), [0, 0, 0])
    b = Pose(Rotation.from_axis_angle([0, 0.1, 0]), [0.003, 0.004, 0])
    dt, da = pose_errors(a, b)
    assert np.isclose(dt, 0.005) and np.isclose(da, 0.1)


def test_pose_csv_round_trip(tmp_path):
    recs = [(0.5 * i, Pose(Rotation.from_axis_angle([0.1 * i, 0, 0.2]), [i, 2.0, -1.0])) for i in range(4)]
    write_pose_csv(tmp_path / "p.csv", recs)
    back = read_pose_csv(tmp_path / "p.csv")
    for (s0, p0), (s1, p1) in zip(recs, back):
        assert s0 == s1
        assert np.array_equal(p0.translation, p1.translation)
        assert np.array_equal(p0.rotation.q, p1.rotation.q)
