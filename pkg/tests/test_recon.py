import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probepose.errors import EmptyInput, EmptyVolume, PitchMismatch
from probepose.geometry import Pose
from probepose.recon import (SliceSet, VoxelVolume, compound, cylinder_phantom, load_volume, save_volume,
                             volume_metrics)

P = 5e-4


def cube(n=6, offset=(0, 0, 0)):
    g = np.ones((n, n, n), bool)
    return VoxelVolume(np.array(offset), P, g)


def test_identity_metrics():
    m = volume_metrics(cube(), cube())
    assert m == {"hausdorff": 0.0, "chamfer": 0.0, "dice": 1.0, "jaccard": 1.0}


def test_shifted_cube():
    m = volume_metrics(cube(6), cube(6, (2, 0, 0)))
    assert m["hausdorff"] == pytest.approx(2 * P * 1e3)
    assert m["jaccard"] == pytest.approx(4 / 8)
    assert m["dice"] == pytest.approx(2 * 4 / 12)


@given(st.integers(1, 5), st.integers(0, 3), st.integers(0, 3))
@settings(max_examples=30, deadline=None)
def test_dice_jaccard_identity(dx, dy, dz):
    m = volume_metrics(cube(5), cube(5, (dx, dy, dz)))
    assert abs(m["dice"] - 2 * m["jaccard"] / (1 + m["jaccard"])) < 1e-12
    assert m["chamfer"] <= 2 * m["hausdorff"] + 1e-12


def test_metric_errors():
    with pytest.raises(PitchMismatch):
        volume_metrics(cube(), VoxelVolume([0, 0, 0], 1e-3, np.ones((2, 2, 2), bool)))
    with pytest.raises(EmptyVolume):
        volume_metrics(cube(), VoxelVolume([0, 0, 0], P, np.zeros((2, 2, 2), bool)))


def test_compound_single_slice_and_empty():
    mask = np.zeros((5, 7), bool)
    mask[2, 3] = True
    s = SliceSet([mask], [Pose()], pixel_pitch=P)
    v = compound(s, P)
    assert v.count == 1
    with pytest.raises(EmptyInput):
        compound(SliceSet([np.zeros((5, 7), bool)], [Pose()], P), P)
    with pytest.raises(EmptyInput):
        compound(SliceSet([], []), P)


def test_cylinder_volume():
    slices, analytic = cylinder_phantom()
    v = compound(slices)
    assert abs(v.volume / analytic - 1) < 0.05


def test_volume_io(tmp_path):
    v = cube(4, (3, -2, 7))
    save_volume(tmp_path / "a.vol", v)
    w = load_volume(tmp_path / "a.vol")
    assert np.array_equal(w.start, v.start) and np.array_equal(w.grid, v.grid) and w.pitch == v.pitch
