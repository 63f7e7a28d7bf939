import math

import numpy as np
import pytest

from conftest import random_rotation
from probepose.errors import DegenerateSet
from probepose.geometry import Pose, Rotation, pose_errors
from probepose.sim2real import (CalibrationPair, Sim2RealCorrection, apply_correction, calibrate, load_correction,
                                pair_losses, save_correction)


def _pairs(n, U, V, seed=0, tilt=0.3):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        N = Pose(random_rotation(rng, tilt), rng.uniform(-0.1, 0.1, 3))
        out.append(CalibrationPair(U @ N @ V, N))
    return out


U = Pose(Rotation.from_axis_angle([0.01, -0.015, 0.005]), [0.002, -0.001, 0.0015])
V = Pose(Rotation.from_axis_angle([-0.008, 0.004, 0.012]), [-0.001, 0.002, 0.001])


def test_recovers_planted_offsets():
    c = calibrate(_pairs(10, U, V))
    for a, b in ((c.U, U), (c.V, V)):
        dt, da = pose_errors(a, b)
        assert dt < 1e-7 and da < 1e-7
    assert c.pair_count == 10 and c.loss < 1e-6


def test_identity_when_no_offset():
    c = calibrate(_pairs(6, Pose.identity(), Pose.identity()))
    assert pose_errors(c.U, Pose.identity())[0] < 1e-12


def test_degenerate_sets():
    with pytest.raises(DegenerateSet):
        calibrate(_pairs(3, U, V))
    flat = [CalibrationPair(U @ Pose(Rotation.from_axis_angle([0, 0, a]), [a, 0, 0]) @ V,
                            Pose(Rotation.from_axis_angle([0, 0, a]), [a, 0, 0])) for a in np.linspace(0, 1, 6)]
    with pytest.raises(DegenerateSet):
        calibrate(flat)


def test_correction_inverse_and_io(tmp_path):
    c = Sim2RealCorrection(U, V, 0.1, 5)
    N = Pose(Rotation.from_axis_angle([0.1, 0, 0]), [0.01, 0, 0.1])
    back = apply_correction(c.inverse(), apply_correction(c, N))
    assert pose_errors(back, N)[0] < 1e-15
    save_correction(tmp_path / "c.json", c)
    d = load_correction(tmp_path / "c.json")
    assert np.allclose(d.U.as_matrix(), U.as_matrix()) and d.pair_count == 5


def test_losses_are_zero_at_truth():
    pairs = _pairs(5, U, V)
    assert pair_losses(pairs, U, V).max() < 1e-12
