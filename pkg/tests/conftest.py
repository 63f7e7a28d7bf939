import math

import numpy as np
import pytest

from probepose.geometry import Pose, Rotation
from probepose.simcam import CameraRig, Intrinsics, Workspace


@pytest.fixture(scope="session")
def workspace():
    return Workspace()


@pytest.fixture(scope="session")
def k():
    return Intrinsics.default()


@pytest.fixture(scope="session")
def rig():
    return CameraRig.default()


def down_camera(x=0.0, y=0.0, z=0.12, tilt=(0.0, 0.0), yaw=0.0) -> Pose:
    """Camera above the plane looking down, optionally tilted (radians)."""
    R = (Rotation.from_axis_angle([0.0, 0.0, yaw]) * Rotation.from_axis_angle([math.pi, 0.0, 0.0])
         * Rotation.from_axis_angle([tilt[0], tilt[1], 0.0]))
    return Pose(R, [x, y, z])


def random_rotation(rng, max_angle=math.pi) -> Rotation:
    v = rng.normal(size=3)
    return Rotation.from_axis_angle(v / np.linalg.norm(v) * rng.uniform(0, max_angle))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(ACCEPTANCE[key])
