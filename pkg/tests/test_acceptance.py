"""Acceptance criteria C1-C10 at their stated tolerances.

Each test records one PASS/FAIL line (plus the measured numbers) that is
printed in the pytest terminal summary. Run with ``pytest tests/test_acceptance.py -v``.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, random_rotation
from probepose.cli import main as cli_main
from probepose.fusion import fuse_poses
from probepose.geometry import Pose, Rotation, pose_errors, rotation_angle_between
from probepose.harness import (calibrate_profile, convergence_suite, error_report, fiducial_corners,
                               generate_trajectory, get_profile, planted_offsets, pnp_baseline,
                               random_camera_pose, random_offset, run_experiment)
from probepose.image import Jitter, inject_perturbation
from probepose.pose_error import decompose_homography
from probepose.recon import VoxelVolume, compound, cylinder_phantom, volume_metrics
from probepose.servo import ServoConfig, run_session
from probepose.sim2real import CalibrationPair, apply_correction, calibrate
from probepose.simcam import Intrinsics, Workspace, plane_homography, plane_in_camera, render_view

MM, DEG = 1e-3, math.radians(1.0)
SUITE_N = 100
OCC_N = 50
TRAJ_SAMPLES = 24  # U-shape waypoints per run in C5 (the CLI default is 64)


def record(cid: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[cid] = f"{cid:<4} {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.fixture(scope="module")
def k():
    return Intrinsics.default()


@pytest.fixture(scope="module")
def ws():
    return Workspace()


@pytest.fixture(scope="module")
def clean_suite(k, ws):
    t0 = time.perf_counter()
    cases = convergence_suite(SUITE_N, seed=2024, k=k, workspace=ws)
    return cases, time.perf_counter() - t0


def _errors(cases):
    out = []
    for c in cases:
        if c.result is not None and c.result.converged:
            out.append(pose_errors(c.result.camera_pose, c.gt))
    return np.array(out).reshape(-1, 2)


# -- C1 ------------------------------------------------------------------------------


def test_c1_homography_round_trip(k):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst_t = worst_r = 0.0
    for _ in range(1000):
        s = random_camera_pose(rng)
        # target camera G relative to the simulated camera S, up to 30 mm / 10 deg
        rel = Pose(random_rotation(rng, 10 * DEG), random_rotation(rng).apply([0.03 * rng.uniform(), 0, 0]))
        plane = plane_in_camera(s)
        e = decompose_homography(plane_homography(k, rel, plane), k, plane.normal, plane.distance)
        dt, da = pose_errors(e.as_pose(), rel)
        worst_t, worst_r = max(worst_t, dt), max(worst_r, da)
    secs = time.perf_counter() - t0
    ok = worst_r < 1e-6 and worst_t < 1e-6 and secs < 10
    record("C1", ok, f"1000 poses: max rot err {worst_r:.2e} rad, max trans err {worst_t:.2e} m, {secs:.1f} s")
    assert ok


# -- C2 / C3 ----------------------------------------------------------------------------


def test_c2_clean_convergence(clean_suite):
    cases, secs = clean_suite
    conv = [c for c in cases if c.result is not None and c.result.converged and c.result.iterations <= 20]
    rate = len(conv) / len(cases)
    err = _errors(conv)
    max_t, max_r = err[:, 0].max(), err[:, 1].max()
    ok = rate >= 0.95 and max_t <= 0.2 * MM and max_r <= 0.2 * DEG and secs < 300
    record("C2", ok, f"{len(conv)}/{len(cases)} converged; max err {max_t / MM:.3f} mm / {max_r / DEG:.3f} deg; "
                     f"mean {err[:, 0].mean() / MM:.3f} mm; {secs:.0f} s")
    assert ok


def test_c3_iteration_budget(clean_suite):
    cases, _ = clean_suite
    its = np.array([c.result.iterations for c in cases if c.result is not None and c.result.converged])
    ok = its.mean() <= 13
    record("C3", ok, f"iterations {its.mean():.2f} +/- {its.std():.2f} (min {its.min()}, max {its.max()})")
    assert ok


# -- C4 -------------------------------------------------------------------------------------


def test_c4_occlusion(clean_suite, k, ws):
    cases = convergence_suite(OCC_N, seed=2024, k=k, workspace=ws, occlusion=0.4)
    restored = [c for c in cases if c.restored is not None]
    rate = len(restored) / len(cases)
    mae = [float(np.abs(c.restored.image.astype(float) - c.clean).mean()) for c in restored]
    # same targets and start poses as the first OCC_N clean cases
    pairs = [(c, ref) for c, ref in zip(cases, clean_suite[0][:OCC_N])
             if c.result is not None and c.result.converged and ref.result is not None and ref.result.converged]
    occ_err = np.mean([pose_errors(c.result.camera_pose, c.gt)[0] for c, _ in pairs])
    clean_err = np.mean([pose_errors(r.result.camera_pose, r.gt)[0] for _, r in pairs])
    occ_rot = np.mean([pose_errors(c.result.camera_pose, c.gt)[1] for c, _ in pairs])
    clean_rot = np.mean([pose_errors(r.result.camera_pose, r.gt)[1] for _, r in pairs])
    ok = rate >= 0.9 and max(mae) < 4.0 and occ_err <= 2 * clean_err and occ_rot <= 2 * clean_rot
    record("C4", ok, f"restored {len(restored)}/{len(cases)}; MAE mean {np.mean(mae):.2f}, max {max(mae):.2f}; "
                     f"servo err {occ_err / MM:.3f} mm vs clean {clean_err / MM:.3f} mm "
                     f"(x{occ_err / clean_err:.2f}), rot x{occ_rot / clean_rot:.2f}")
    assert ok


# -- C5 -----------------------------------------------------------------------------------------


def test_c5_stress_profile(ws):
    traj = generate_trajectory("u_shape", TRAJ_SAMPLES)
    clean = run_experiment(traj, workspace=ws, profile="clean", camera_mode="dual", seed=5).report.summary
    corr = calibrate_profile(workspace=ws, profile="paperlike", seed=5)
    stress = run_experiment(traj, workspace=ws, profile="paperlike", correction=corr, camera_mode="dual",
                            seed=5).report.summary
    ok = (stress.trans_avg <= 1.5 and stress.rot_avg <= 1.4 and clean.trans_avg < stress.trans_avg
          and clean.rot_avg < stress.rot_avg and stress.failures == 0)
    record("C5", ok, f"paperlike dual: {stress.trans_avg:.3f} mm / {stress.rot_avg:.3f} deg "
                     f"(failures {stress.failures}); clean: {clean.trans_avg:.3f} mm / {clean.rot_avg:.3f} deg")
    assert ok


# -- C6 -------------------------------------------------------------------------------------------


def test_c6_sim2real_recovery():
    U, V = planted_offsets(get_profile("paperlike"))
    rng = np.random.default_rng(6)
    pairs = []
    for _ in range(10):
        N = Pose(random_rotation(rng, 20 * DEG) * Rotation.from_axis_angle([math.pi, 0, 0]),
                 [*rng.uniform(-0.1, 0.1, 2), rng.uniform(0.07, 0.1)])
        pairs.append(CalibrationPair(U @ N @ V, N))
    c = calibrate(pairs)
    (ut, ur), (vt, vr) = pose_errors(c.U, U), pose_errors(c.V, V)
    before = np.array([pose_errors(p.estimate, p.ground_truth) for p in pairs])
    after = np.array([pose_errors(apply_correction(c, p.estimate), p.ground_truth) for p in pairs])
    red_t = 1 - after[:, 0].mean() / before[:, 0].mean()
    red_r = 1 - after[:, 1].mean() / before[:, 1].mean()
    ok = max(ut, vt) <= 0.1 * MM and max(ur, vr) <= 0.01 * DEG and red_t >= 0.9 and red_r >= 0.9
    record("C6", ok, f"U err {ut / MM:.2e} mm / {ur / DEG:.2e} deg, V err {vt / MM:.2e} mm / {vr / DEG:.2e} deg; "
                     f"error reduced by {100 * red_t:.2f}% (trans), {100 * red_r:.2f}% (rot)")
    assert ok


# -- C7 --------------------------------------------------------------------------------------------


def test_c7_fusion_unit_cases():
    from probepose.pose_error import FeatureError
    from probepose.servo import confidence_weight

    L = Pose(Rotation.from_axis_angle([0.0, 0.0, 0.2]), [0.01, 0.02, 0.1])
    R = Pose(Rotation.from_axis_angle([0.0, 0.0, 0.6]), [0.03, 0.0, 0.1])
    w0 = confidence_weight(FeatureError.zero())
    mid = fuse_poses(L, R, 0.7, 0.7).pose
    d_mid = max(np.abs(mid.translation - [0.02, 0.01, 0.1]).max(),
                rotation_angle_between(mid.rotation, Rotation.from_axis_angle([0, 0, 0.4])))
    single = fuse_poses(L, None, 0.3, 0.0).pose
    d_single = max(np.abs(single.as_matrix() - L.as_matrix()).max(),
                   np.abs(fuse_poses(None, R, 0.0, 0.9).pose.as_matrix() - R.as_matrix()).max())
    ok = abs(w0 - 1.0) <= 1e-12 and d_mid <= 1e-12 and d_single <= 1e-12
    record("C7", ok, f"|w(0)-1| = {abs(w0 - 1):.1e}; midpoint dev {d_mid:.1e}; single-camera dev {d_single:.1e}")
    assert ok


# -- C8 --------------------------------------------------------------------------------------------


def test_c8_volume_metrics():
    p = 5e-4
    cube = lambda off=(0, 0, 0), n=8: VoxelVolume(np.array(off), p, np.ones((n, n, n), bool))
    ident = volume_metrics(cube(), cube())
    shift = volume_metrics(cube(), cube((3, 0, 0)))
    half = volume_metrics(cube(), cube((4, 0, 0)))
    exact = (ident == {"hausdorff": 0.0, "chamfer": 0.0, "dice": 1.0, "jaccard": 1.0}
             and abs(shift["hausdorff"] - 3 * p * 1e3) < 1e-12
             and abs(shift["jaccard"] - 5 / 11) < 1e-12
             and abs(half["dice"] - 0.5) < 1e-12 and abs(half["jaccard"] - 1 / 3) < 1e-12)
    dice_dev = max(abs(m["dice"] - 2 * m["jaccard"] / (1 + m["jaccard"])) for m in (ident, shift, half))
    slices, analytic = cylinder_phantom()
    ratio = compound(slices).volume / analytic
    ok = exact and dice_dev <= 1e-12 and abs(ratio - 1) <= 0.05
    record("C8", ok, f"fixtures exact: {exact}; Dice-Jaccard dev {dice_dev:.1e}; "
                     f"cylinder volume ratio {ratio:.4f}")
    assert ok


# -- C9 ---------------------------------------------------------------------------------------------


def test_c9_baseline(k, ws):
    gts, pnp, servo = [], [], []
    for i, ss in enumerate(np.random.SeedSequence(909).spawn(20)):
        rng = np.random.default_rng(ss)
        gt = random_camera_pose(rng)
        gts.append(gt)
        pnp.append(pnp_baseline(gt, k, rng, noise_px=0.5))
        img = inject_perturbation(render_view(gt, k, ws), Jitter(0.5), seed=rng)
        r = run_session(img, k, ws, random_offset(gt, rng), ServoConfig(seed=i))
        servo.append(r.camera_pose if r.converged else None)
    p = error_report(pnp, gts, mode="pnp").summary
    s = error_report(servo, gts, mode="servo").summary
    met = s.trans_avg <= p.trans_avg
    status = "met" if met else "DEVIATION (servo mean above PnP; documented, not a failure)"
    record("C9", True, f"servo {s.trans_avg:.3f} mm / {s.rot_avg:.3f} deg vs planar PnP "
                       f"{p.trans_avg:.3f} mm / {p.rot_avg:.3f} deg at 0.5 px: {status}")
    # the criterion requires a comparison, with a documented deviation when the servo is worse
    assert s.failures == 0 and p.count == len(gts)


# -- C10 ----------------------------------------------------------------------------------------------


def test_c10_determinism(tmp_path):
    args = ["eval-traj", "--kind", "u_shape", "--mode", "dual", "--clean", "--samples", "3", "--seed", "42"]
    assert cli_main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli_main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "report.json").read_bytes()
    b = (tmp_path / "b" / "report.json").read_bytes()
    ok = a == b
    avg = json.loads(a)["summary"]["trans_avg"]
    record("C10", ok, f"two eval-traj runs with seed 42: report.json byte-identical = {ok} "
                      f"({len(a)} bytes, avg {avg:.3f} mm)")
    assert ok
