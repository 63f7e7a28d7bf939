import math

import numpy as np
import pytest

from conftest import down_camera
from probepose.errors import BehindCamera, DegeneratePose, InvalidSpec
from probepose.geometry import Pose, Rotation
from probepose.image import apply_homography
from probepose.simcam import (CameraRig, Intrinsics, backproject, load_rig, pattern_homography, plane_homography,
                              plane_homography_scale, plane_in_camera, probe_orientation, project, render_view,
                              save_rig)


def test_default_intrinsics(k):
    assert (k.width, k.height, k.cx, k.cy) == (640, 360, 320.0, 180.0)
    assert math.isclose(2 * math.degrees(math.atan(320 / k.fx)), 83.0)


def test_invalid_intrinsics():
    with pytest.raises(InvalidSpec):
        Intrinsics(-1, 1, 0, 0, 10, 10)
    with pytest.raises(InvalidSpec):
        Intrinsics(1, 1, 20, 0, 10, 10)


def test_project_backproject_round_trip(k):
    cam = down_camera(0.01, 0.02, 0.12, tilt=(0.1, -0.05))
    plane = plane_in_camera(cam)
    px = np.array([[10.0, 20.0], [320.0, 180.0], [600.0, 350.0]])
    X = backproject(k, px, plane)
    assert np.allclose(project(k, X), px)
    # back-projected points lie on z = 0 in the world
    assert np.allclose(cam.apply(X)[:, 2], 0.0, atol=1e-12)
    with pytest.raises(BehindCamera):
        project(k, [0.0, 0.0, -1.0])


def test_plane_homography_transfers_points(k):
    s = down_camera(0.0, 0.0, 0.12)
    g = down_camera(0.01, -0.005, 0.11, tilt=(0.05, 0.02), yaw=0.1)
    rel = s.inverse() @ g
    H = plane_homography(k, rel, plane_in_camera(s))
    # a plane point seen by G maps to its pixel in S under H
    X = np.array([[0.01, 0.0, 0.0], [-0.02, 0.03, 0.0], [0.0, -0.01, 0.0]])
    pg = project(k, g.inverse().apply(X))
    ps = project(k, s.inverse().apply(X))
    assert np.allclose(apply_homography(H, ps), pg, atol=1e-9)
    assert H[2, 2] == pytest.approx(1.0)
    xi = plane_homography_scale(k, rel, plane_in_camera(s))
    plane = plane_in_camera(s)
    G = k.K @ rel.R.T @ (np.eye(3) + np.outer(rel.translation, plane.normal) / plane.distance) @ k.K_inv
    assert np.allclose(xi * G, H)


def test_render_matches_pattern_homography(k, workspace):
    cam = down_camera(0.05, -0.03, 0.13, tilt=(0.1, 0.0))
    img, mask = render_view(cam, k, workspace, return_mask=True)
    assert img.shape == (360, 640, 3) and mask.all()
    H = pattern_homography(k, cam, workspace)
    u, v = 200, 100
    q = apply_homography(np.linalg.inv(H), np.array([[u, v]]))[0]
    assert np.allclose(img[v, u], workspace.pattern[int(round(q[1])), int(round(q[0]))], atol=60)
    assert np.array_equal(img, render_view(cam, k, workspace))


def test_render_rejects_camera_below_plane(k, workspace):
    with pytest.raises(DegeneratePose):
        render_view(Pose(Rotation.identity(), [0, 0, -0.1]), k, workspace)


def test_rig_geometry(rig):
    probe = Pose(probe_orientation([0, 1, 0]), [0, 0, 0.08])
    for name in ("left", "right"):
        cam = rig.camera_pose(probe, name)
        assert cam.translation[2] == pytest.approx(0.13)
        assert cam.R[2, 2] < -0.8  # optical axis points down
        assert np.allclose(rig.probe_pose(cam, name).as_matrix(), probe.as_matrix())


def test_rig_json_round_trip(tmp_path, rig):
    save_rig(tmp_path / "rig.json", rig)
    back, ws = load_rig(tmp_path / "rig.json")
    for a, b in zip(rig.cameras, back.cameras):
        assert a.name == b.name and a.intrinsics == b.intrinsics
        assert np.allclose(a.extrinsic.as_matrix(), b.extrinsic.as_matrix())
    with pytest.raises(InvalidSpec):
        CameraRig(())
