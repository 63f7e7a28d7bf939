import numpy as np
import pytest

from conftest import down_camera
from probepose.errors import EstimationFailed, InvalidSpec, TooFewFeatures
from probepose.image import apply_homography, blank, warp_homography
from probepose.registration import (Homography, MatchSet, RansacConfig, detect_and_describe, dlt_homography,
                                    dump_matches, estimate_homography, hamming_matrix, hamming_popcount, match,
                                    refine_homography, register)
from probepose.simcam import render_view

H_TRUE = np.array([[1.02, 0.03, 4.0], [-0.02, 0.98, -3.0], [2e-5, -1e-5, 1.0]])


def _corner_err(a, b, w=640, h=360):
    c = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], float)
    return np.abs(apply_homography(a, c) - apply_homography(b, c)).max()


def test_dlt_exact_on_four_points():
    src = np.array([[0, 0], [100, 0], [100, 80], [0, 80]], float)
    H = dlt_homography(src, apply_homography(H_TRUE, src))
    assert np.allclose(H / H[2, 2], H_TRUE, atol=1e-9)


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(0)
    src = rng.uniform(0, 600, size=(200, 2))
    dst = apply_homography(H_TRUE, src) + rng.normal(0, 0.3, size=(200, 2))
    bad = rng.choice(200, 60, replace=False)
    dst[bad] = rng.uniform(0, 600, size=(60, 2))
    m = MatchSet(np.arange(200), np.arange(200), np.zeros(200), src, dst)
    h = estimate_homography(m, RansacConfig(seed=1))
    assert _corner_err(h.matrix, H_TRUE) < 1.0
    assert not h.inliers[bad].any() or h.inliers[bad].sum() < 3
    again = estimate_homography(m, RansacConfig(seed=1))
    assert np.array_equal(again.matrix, h.matrix)


def test_ransac_fails_on_noise():
    rng = np.random.default_rng(1)
    src, dst = rng.uniform(0, 600, size=(2, 50, 2))
    with pytest.raises(EstimationFailed):
        estimate_homography(MatchSet(np.arange(50), np.arange(50), np.zeros(50), src, dst))


def test_homography_validation():
    with pytest.raises(EstimationFailed):
        Homography(np.zeros((3, 3)))
    with pytest.raises(InvalidSpec):
        Homography(np.eye(3), "a", "a")


def test_hamming_paths_agree():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 2**63, size=(30, 4), dtype=np.uint64)
    b = rng.integers(0, 2**63, size=(40, 4), dtype=np.uint64)
    assert np.array_equal(hamming_matrix(a, b), hamming_popcount(a, b))


def test_blank_image_has_too_few_features():
    with pytest.raises(TooFewFeatures):
        detect_and_describe(blank(200, 200, (128, 128, 128)))


def test_register_two_views(k, workspace, tmp_path):
    a = render_view(down_camera(0.0, 0.0, 0.12), k, workspace)
    b = warp_homography(a, H_TRUE, 640, 360)
    h, m = register(detect_and_describe(a), detect_and_describe(b), RansacConfig(seed=0))
    assert h.inlier_count >= 50
    assert _corner_err(h.matrix, H_TRUE) < 1.0
    dump_matches(tmp_path / "m.json", m, h)
    assert (tmp_path / "m.json").stat().st_size > 0


def test_photometric_refinement_improves_estimate(k, workspace):
    a, mask = render_view(down_camera(0.0, 0.0, 0.12), k, workspace, return_mask=True)
    b = warp_homography(a, H_TRUE, 640, 360)
    rough = H_TRUE.copy()
    rough[0, 2] += 0.6
    rough[1, 2] -= 0.4
    fine = refine_homography(a, b, rough, template_mask=mask)
    assert _corner_err(fine, H_TRUE) < 0.1 < _corner_err(rough, H_TRUE)


def test_match_ratio_test_is_symmetric_in_tags(k, workspace):
    f = detect_and_describe(render_view(down_camera(), k, workspace))
    m = match(f, f, src="a", dst="b")
    assert len(m) > 100 and np.array_equal(m.src_idx, m.dst_idx)
