import numpy as np
import pytest

from conftest import down_camera
from probepose.errors import RestorationFailed
from probepose.image import band_occlusion, blank, inject_perturbation
from probepose.restoration import restore_view, side_by_side
from probepose.simcam import render_view


@pytest.fixture(scope="module")
def clean_view(k, workspace):
    return render_view(down_camera(0.03, 0.02, 0.12, tilt=(0.08, -0.05), yaw=0.4), k, workspace)


def test_restore_clean_view(clean_view, workspace):
    r = restore_view(clean_view, workspace.pattern)
    assert r.mask.mean() > 0.99
    mae = np.abs(r.image.astype(float) - clean_view)[r.mask].mean()
    assert mae < 4.0
    assert side_by_side(clean_view, r).shape == (360, 640 * 2 + 8, 3)


def test_restore_removes_occlusion(clean_view, workspace):
    occ = band_occlusion(640, 360, 0.4, np.random.default_rng(3))
    live = inject_perturbation(clean_view, occ)
    r = restore_view(live, workspace.pattern)
    mae = np.abs(r.image.astype(float) - clean_view)[r.mask].mean()
    assert mae < 4.0


def test_restore_fails_without_texture(workspace):
    with pytest.raises(RestorationFailed):
        restore_view(blank(640, 360, (90, 90, 90)), workspace.pattern)
