"""Position-based visual servoing of a simulated camera onto a restored target view."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DecompositionFailed, DegeneratePose, EstimationFailed, InvalidSpec, NoMatches,
                     NotConverged, SessionFailed, TooFewFeatures)
from .geometry import Pose, Twist, integrate_twist
from .pose_error import FeatureError, decompose_homography
from .registration import RansacConfig, detect_and_describe, estimate_homography, match, refine_homography
from .restoration import RestoredView
from .simcam import Intrinsics, RigCamera, Workspace, plane_in_camera, render_view

MU_T = 1000.0
MU_R = 50.0


@dataclass(frozen=True)
class ServoConfig:
    lambda_t: float = 0.5
    lambda_r: float = 0.5
    trans_tol: float = 0.2e-3
    rot_tol: float = math.radians(0.2)
    max_iter: int = 20
    dt: float = 1.0
    seed: int = 0  # RANSAC sampling
    refine: bool = True  # photometric polish of each sim->target homography

    def __post_init__(self):
        if not (0 < self.lambda_t <= 1 and 0 < self.lambda_r <= 1):
            raise InvalidSpec("gains must lie in (0, 1]")
        if not (self.trans_tol > 0 and self.rot_tol > 0):
            raise InvalidSpec("tolerances must be positive")
        if self.max_iter < 1:
            raise InvalidSpec("max_iter must be at least 1")
        if not self.dt > 0:
            raise InvalidSpec("dt must be positive")


@dataclass(eq=False)
class ServoResult:
    pose: Pose  # probe in the virtual world (camera pose if no extrinsic was given)
    camera_pose: Pose
    weight: float
    iterations: int
    converged: bool
    residual: FeatureError
    trace: list = field(default_factory=list)  # (iteration, |t| m, |theta u| rad)
    camera: str = ""


def control_step(e: FeatureError, cfg: ServoConfig) -> Twist:
    """Proportional camera-frame twist ``v = (lambda_t t, lambda_r theta u)``."""
    return Twist(cfg.lambda_t * e.translation, cfg.lambda_r * e.rotation)


def confidence_weight(e: FeatureError) -> float:
    return 1.0 / (1.0 + MU_T * e.trans_norm + MU_R * e.rot_norm)


def measure_error(sim_pose: Pose, target_img: np.ndarray, target_feats, k: Intrinsics,
                  workspace: Workspace, ransac: RansacConfig, refine: bool = True) -> FeatureError:
    """Render at ``sim_pose``, register against the target and decompose."""
    img, mask = render_view(sim_pose, k, workspace, return_mask=True)
    feats = detect_and_describe(img)
    m = match(feats, target_feats, src="sim", dst="target")
    h = estimate_homography(m, ransac).matrix
    if refine:
        h = refine_homography(img, target_img, h, template_mask=mask)
    plane = plane_in_camera(sim_pose)
    return decompose_homography(h, k, plane.normal, plane.distance)


def run_session(target: RestoredView | np.ndarray, camera: RigCamera | Intrinsics, workspace: Workspace,
                init_pose: Pose, cfg: ServoConfig | None = None, raise_on_nonconvergence: bool = False) -> ServoResult:
    """Drive a simulated camera from ``init_pose`` (camera-in-world) onto ``target``.

    The result carries the converged camera pose and, when ``camera`` has a
    rig extrinsic, the corresponding probe pose. Non-convergence returns a
    result flagged ``converged=False`` unless ``raise_on_nonconvergence``.
    """
    cfg = cfg or ServoConfig()
    if isinstance(camera, RigCamera):
        k, extrinsic, name = camera.intrinsics, camera.extrinsic, camera.name
    else:
        k, extrinsic, name = camera, None, ""
    img = target.image if isinstance(target, RestoredView) else np.asarray(target)
    ransac = RansacConfig(seed=cfg.seed)
    try:
        target_feats = detect_and_describe(img)
    except TooFewFeatures as err:
        raise SessionFailed(f"target view: {err}") from err

    def measure(p: Pose, it: int) -> FeatureError:
        try:
            return measure_error(p, img, target_feats, k, workspace, ransac, cfg.refine)
        except (TooFewFeatures, NoMatches, EstimationFailed, DecompositionFailed, DegeneratePose,
                ValueError) as err:
            raise SessionFailed(f"iteration {it}: {type(err).__name__}: {err}") from err

    def within(e: FeatureError) -> bool:
        return e.trans_norm < cfg.trans_tol and e.rot_norm < cfg.rot_tol

    # repeat { measure; step } until the measured error was within tolerance
    pose = init_pose
    trace = []
    converged = False
    it = 0
    while it < cfg.max_iter:
        it += 1
        e = measure(pose, it)
        trace.append((it, e.trans_norm, e.rot_norm))
        pose = integrate_twist(pose, control_step(e, cfg), cfg.dt)
        if within(e):
            converged = True
            break
    # the reported residual is measured at the returned pose, never extrapolated
    e = measure(pose, it + 1)
    converged = converged and within(e)

    probe = pose if extrinsic is None else pose @ extrinsic.inverse()
    result = ServoResult(probe, pose, confidence_weight(e), it, converged, e, trace, name)
    if not converged and raise_on_nonconvergence:
        raise NotConverged(f"no convergence after {cfg.max_iter} iterations", result)
    return result


def write_trace(path, result: ServoResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "trans_err_mm", "rot_err_deg"])
        for i, t, r in result.trace:
            w.writerow([i, f"{t * 1e3:.6f}", f"{math.degrees(r):.6f}"])
