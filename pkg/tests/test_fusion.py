import math

import numpy as np
import pytest

from probepose.errors import NoEstimate
from probepose.fusion import fuse, fuse_poses
from probepose.geometry import Pose, Rotation, rotation_angle_between
from probepose.pose_error import FeatureError
from probepose.servo import ServoResult, confidence_weight

L = Pose(Rotation.from_axis_angle([0, 0, 0.2]), [0.0, 0.0, 0.1])
R = Pose(Rotation.from_axis_angle([0, 0, 0.4]), [0.002, 0.0, 0.1])


def _result(pose, converged=True, weight=1.0):
    return ServoResult(pose, pose, weight, 3, converged, FeatureError.zero())


def test_equal_weights_give_midpoint():
    f = fuse_poses(L, R, 0.5, 0.5)
    assert np.allclose(f.pose.translation, [0.001, 0, 0.1], atol=1e-15)
    assert rotation_angle_between(f.pose.rotation, Rotation.from_axis_angle([0, 0, 0.3])) < 1e-12


def test_weighting_follows_confidence():
    f = fuse_poses(L, R, 3.0, 1.0)
    assert np.allclose(f.pose.translation, [0.0005, 0, 0.1])


def test_single_camera_fallback_is_verbatim():
    f = fuse(_result(L), None)
    assert f.pose is L and f.cameras == ("left",)
    f = fuse(_result(L, converged=False), _result(R))
    assert f.pose is R and f.cameras == ("right",)


def test_no_estimate():
    with pytest.raises(NoEstimate):
        fuse(None, _result(R, converged=False))
    with pytest.raises(ValueError):
        fuse_poses(L, R, 0.0, 1.0)


def test_weight_at_zero_error_is_one():
    assert confidence_weight(FeatureError.zero()) == 1.0
