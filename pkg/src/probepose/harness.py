"""End-to-end experiments: trajectories, perturbation profiles, error reports.

Every stochastic choice for a waypoint (perturbations, servo start pose,
RANSAC seed) is drawn from a generator spawned from one master seed, so a
run is reproducible and waypoints can be evaluated in any order.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateConfiguration, NoEstimate, RestorationFailed, SessionFailed, UnknownKind
from .fusion import fuse_poses
from .geometry import Pose, Rotation, pose_errors, write_pose_csv
from .image import Gamma, GaussianNoise, Jitter, band_occlusion, inject_perturbation
from .restoration import restore_view
from .servo import ServoConfig, run_session
from .sim2real import CalibrationPair, Sim2RealCorrection, apply_correction, calibrate
from .pose_error import planar_pnp
from .simcam import CameraRig, Intrinsics, Workspace, probe_orientation, project, render_view

MODES = ("left", "right", "dual")


# -- trajectories ---------------------------------------------------------------


@dataclass(eq=False)
class Trajectory:
    stamps: np.ndarray
    poses: list
    kind: str = "custom"

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float)
        if len(self.poses) < 2 or len(self.stamps) != len(self.poses):
            raise ValueError("a trajectory needs at least 2 stamped waypoints")
        if np.any(np.diff(self.stamps) <= 0):
            raise ValueError("stamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.poses)


def _u_shape_point(s: float, seg: float = 0.1, radius: float = 0.1):
    """Position and unit tangent at arc length ``s`` along the U."""
    arc = math.pi * radius
    if s <= seg:
        return np.array([-radius, -seg + s]), np.array([0.0, 1.0])
    if s <= seg + arc:
        phi = math.pi - (s - seg) / radius  # from (-r, 0) over the top to (r, 0)
        return radius * np.array([math.cos(phi), math.sin(phi)]), np.array([math.sin(phi), -math.cos(phi)])
    return np.array([radius, -(s - seg - arc)]), np.array([0.0, -1.0])


def u_shape_length(seg: float = 0.1, radius: float = 0.1) -> float:
    return 2 * seg + math.pi * radius


def generate_trajectory(kind: str, samples: int = 64, speed: float = 0.01) -> Trajectory:
    """U-shape (two 100 mm legs joined by a 100 mm-radius semicircle at 80 mm
    height) or spiral (3/4 turn, radius 100 -> 70 mm, height 70 -> 100 mm),
    sampled uniformly in arc length. ``speed`` (m/s) only sets the stamps."""
    if samples < 2:
        raise ValueError("need at least 2 samples")
    if kind == "u_shape":
        length = u_shape_length()
        s = np.linspace(0.0, length, samples)
        poses = []
        for si in s:
            p, tan = _u_shape_point(si)
            poses.append(Pose(probe_orientation([tan[0], tan[1], 0.0]), [p[0], p[1], 0.08]))
        return Trajectory(s / speed, poses, kind)
    if kind == "spiral":
        # dense parameter grid -> cumulative arc length -> uniform resampling
        u = np.linspace(0.0, 1.0, 20001)
        th = 1.5 * math.pi * u
        r = 0.10 - 0.03 * u
        z = 0.07 + 0.03 * u
        xyz = np.column_stack([r * np.cos(th), r * np.sin(th), z])
        cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xyz, axis=0), axis=1))])
        s = np.linspace(0.0, cum[-1], samples)
        us = np.interp(s, cum, u)
        poses = []
        for ui in us:
            th_i, r_i, z_i = 1.5 * math.pi * ui, 0.10 - 0.03 * ui, 0.07 + 0.03 * ui
            d = np.array([-r_i * 1.5 * math.pi * math.sin(th_i) - 0.03 * math.cos(th_i),
                          r_i * 1.5 * math.pi * math.cos(th_i) - 0.03 * math.sin(th_i), 0.0])
            poses.append(Pose(probe_orientation(d), [r_i * math.cos(th_i), r_i * math.sin(th_i), z_i]))
        return Trajectory(s / speed, poses, kind)
    raise UnknownKind(f"unknown trajectory kind {kind!r}")


def path_length(traj: Trajectory) -> float:
    pts = np.array([p.translation for p in traj.poses])
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


# -- perturbation profiles ------------------------------------------------------


@dataclass(frozen=True)
class Profile:
    name: str = "clean"
    jitter_px: float = 0.0
    noise_sigma: float = 0.0
    occlusion: float = 0.0  # band area fraction
    gamma_range: tuple = (1.0, 1.0)
    offset_mm: float = 0.0  # planted Sim2Real offset, applied to both U* and V*
    offset_deg: float = 0.0
    calibration_poses: int = 12
    offset_seed: int = 11  # the planted offset is a property of the rig, not of a run

    @property
    def planted(self) -> bool:
        return self.offset_mm > 0 or self.offset_deg > 0


PROFILES = {
    "clean": Profile(),
    "paperlike": Profile("paperlike", jitter_px=0.5, noise_sigma=2.0, occlusion=0.2,
                         gamma_range=(0.7, 1.4), offset_mm=2.0, offset_deg=1.0),
    "occlusion40": Profile("occlusion40", occlusion=0.4),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise UnknownKind(f"unknown perturbation profile {name!r}") from None


def _unit(rng) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def planted_offsets(profile: Profile) -> tuple[Pose, Pose]:
    """``(U*, V*)``: fixed rigid offsets of the stated magnitudes, seeded directions."""
    if not profile.planted:
        return Pose.identity(), Pose.identity()
    rng = np.random.default_rng([profile.offset_seed, 0x51A2])
    mk = lambda: Pose(Rotation.from_axis_angle(_unit(rng) * math.radians(profile.offset_deg)),
                      _unit(rng) * profile.offset_mm * 1e-3)
    return mk(), mk()


def perturb(img: np.ndarray, profile: Profile, rng) -> np.ndarray:
    if profile.gamma_range != (1.0, 1.0):
        img = inject_perturbation(img, Gamma(float(rng.uniform(*profile.gamma_range))))
    if profile.occlusion > 0:
        h, w = img.shape[:2]
        shade = tuple(int(x) for x in rng.integers(10, 90, size=3))
        img = inject_perturbation(img, band_occlusion(w, h, profile.occlusion, rng, shade))
    if profile.noise_sigma > 0:
        img = inject_perturbation(img, GaussianNoise(profile.noise_sigma), seed=rng)
    if profile.jitter_px > 0:
        img = inject_perturbation(img, Jitter(profile.jitter_px), seed=rng)
    return img


def random_offset(pose: Pose, rng, max_trans: float = 0.03, max_rot: float = math.radians(10.0)) -> Pose:
    """``pose`` displaced by a uniform-magnitude, random-direction offset."""
    dt = _unit(rng) * rng.uniform(0.0, max_trans)
    dr = _unit(rng) * rng.uniform(0.0, max_rot)
    return Pose(Rotation.from_axis_angle(dr) * pose.rotation, pose.translation + dt)


def random_camera_pose(rng, height=(0.10, 0.15), max_tilt: float = math.radians(10.0),
                       half_extent: float = 0.2) -> Pose:
    """Downward-looking camera above the pattern interior with a small random tilt."""
    axis = np.array([*rng.normal(size=2), 0.0])
    axis *= rng.uniform(0.0, max_tilt) / np.linalg.norm(axis)
    yaw = rng.uniform(-math.pi, math.pi)
    R = (Rotation.from_axis_angle([0.0, 0.0, yaw]) * Rotation.from_axis_angle([math.pi, 0.0, 0.0])
         * Rotation.from_axis_angle(axis))
    xy = rng.uniform(-half_extent, half_extent, size=2)
    return Pose(R, [xy[0], xy[1], rng.uniform(*height)])


# -- one waypoint -----------------------------------------------------------------


@dataclass(eq=False)
class WaypointResult:
    index: int
    gt: Pose
    estimates: dict  # mode -> corrected Pose or None
    converged: dict  # camera -> bool
    iterations: dict  # camera -> int
    failures: dict  # camera -> error name


@dataclass(frozen=True, eq=False)
class _Job:
    index: int
    gt: Pose
    rig: CameraRig
    workspace: Workspace
    profile: Profile
    cfg: ServoConfig
    correction: Sim2RealCorrection | None
    planted: tuple
    seed: np.random.SeedSequence
    cameras: tuple


def _estimate_camera(job: _Job, name: str, real_probe: Pose, rng):
    cam = job.rig[name]
    live = render_view(real_probe @ cam.extrinsic, cam.intrinsics, job.workspace)
    live = perturb(live, job.profile, rng)
    restored = restore_view(live, job.workspace.pattern)
    init = random_offset(job.gt @ cam.extrinsic, rng)
    cfg = replace(job.cfg, seed=int(rng.integers(0, 2**31)))
    return run_session(restored, cam, job.workspace, init, cfg)


def _run_waypoint(job: _Job) -> WaypointResult:
    U, V = job.planted
    real = U.inverse() @ job.gt @ V.inverse()  # where the physical probe actually is
    results, converged, iters, fails = {}, {}, {}, {}
    for name, ss in zip(job.cameras, job.seed.spawn(len(job.cameras))):
        rng = np.random.default_rng(ss)
        try:
            r = _estimate_camera(job, name, real, rng)
        except (RestorationFailed, SessionFailed) as err:
            fails[name] = type(err).__name__
            converged[name] = False
            continue
        converged[name] = r.converged
        iters[name] = r.iterations
        results[name] = r if r.converged else None
        if not r.converged:
            fails[name] = "NotConverged"

    def fused(names):
        l = results.get("left") if "left" in names else None
        r = results.get("right") if "right" in names else None
        try:
            f = fuse_poses(l.pose if l else None, r.pose if r else None,
                           l.weight if l else 0.0, r.weight if r else 0.0)
        except NoEstimate:
            return None
        return apply_correction(job.correction, f.pose) if job.correction else f.pose

    est = {}
    for mode in MODES:
        names = job.cameras if mode == "dual" else (mode,)
        est[mode] = fused(names) if set(names) <= set(job.cameras) else None
    return WaypointResult(job.index, job.gt, est, converged, iters, fails)


def _map(fn, jobs, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def estimate_poses(gt_poses, rig: CameraRig | None = None, workspace: Workspace | None = None,
                   profile: Profile | str = "clean", cfg: ServoConfig | None = None,
                   correction: Sim2RealCorrection | None = None, seed: int = 0,
                   cameras=("left", "right"), workers: int = 1) -> list[WaypointResult]:
    rig = rig or CameraRig.default()
    workspace = workspace or Workspace()
    profile = get_profile(profile) if isinstance(profile, str) else profile
    cfg = cfg or ServoConfig()
    planted = planted_offsets(profile)
    seeds = np.random.SeedSequence(seed).spawn(len(gt_poses))
    jobs = [_Job(i, p, rig, workspace, profile, cfg, correction, planted, s, tuple(cameras))
            for i, (p, s) in enumerate(zip(gt_poses, seeds))]
    return _map(_run_waypoint, jobs, workers)


# -- calibration of a planted offset --------------------------------------------


def calibration_poses(n: int, seed: int = 0, max_tilt: float = math.radians(15.0)) -> list[Pose]:
    """Diverse probe poses (tilts about both horizontal axes) for Sim2Real calibration."""
    rng = np.random.default_rng([seed, 0xCA1B])
    out = []
    for _ in range(n):
        tilt = np.array([*rng.uniform(-1, 1, size=2), 0.0]) * max_tilt
        base = probe_orientation([math.cos(a := rng.uniform(-math.pi, math.pi)), math.sin(a), 0.0])
        R = Rotation.from_axis_angle(tilt) * base
        out.append(Pose(R, [*rng.uniform(-0.1, 0.1, size=2), rng.uniform(0.07, 0.10)]))
    return out


def calibrate_profile(rig: CameraRig | None = None, workspace: Workspace | None = None,
                      profile: Profile | str = "paperlike", cfg: ServoConfig | None = None,
                      seed: int = 0, workers: int = 1) -> Sim2RealCorrection:
    """Run the pipeline on calibration poses and fit ``(U, V)`` to the results."""
    profile = get_profile(profile) if isinstance(profile, str) else profile
    gts = calibration_poses(profile.calibration_poses, seed)
    res = estimate_poses(gts, rig, workspace, profile, cfg, None, seed + 7919, workers=workers)
    pairs = [CalibrationPair(r.gt, r.estimates["dual"]) for r in res if r.estimates["dual"] is not None]
    return calibrate(pairs)


# -- single-camera suites ----------------------------------------------------------


@dataclass(eq=False)
class SuiteCase:
    index: int
    gt: Pose  # target camera pose
    init: Pose
    result: object  # ServoResult, or None when the session failed
    seconds: float
    restored: object = None  # RestoredView when the target went through restoration
    clean: np.ndarray | None = None  # unperturbed render of the target
    failure: str = ""


def convergence_suite(n: int, seed: int = 0, k: Intrinsics | None = None, workspace: Workspace | None = None,
                      cfg: ServoConfig | None = None, occlusion: float = 0.0) -> list[SuiteCase]:
    """Servo one camera onto ``n`` random targets from offsets of up to 30 mm / 10 deg.

    Case ``i`` depends only on ``(seed, i)``, so a shorter suite is a prefix of
    a longer one. With ``occlusion`` > 0 each target frame gets a band of that
    area fraction and is restored before servoing.
    """
    k = k or Intrinsics.default()
    workspace = workspace or Workspace()
    cfg = cfg or ServoConfig()
    out = []
    for i, ss in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(ss)
        gt = random_camera_pose(rng)
        init = random_offset(gt, rng)
        run_cfg = replace(cfg, seed=int(rng.integers(0, 2**31)))
        t0 = time.perf_counter()
        clean = render_view(gt, k, workspace)
        target, restored, fail, res = clean, None, "", None
        try:
            if occlusion > 0:
                occ_rng = np.random.default_rng([seed, i, 0x0CC])
                live = perturb(clean, Profile("occlusion", occlusion=occlusion), occ_rng)
                restored = restore_view(live, workspace.pattern)
                target = restored
            res = run_session(target, k, workspace, init, run_cfg)
        except (RestorationFailed, SessionFailed) as err:
            fail = type(err).__name__
        out.append(SuiteCase(i, gt, init, res, time.perf_counter() - t0, restored, clean, fail))
    return out


def fiducial_corners(tags: int = 15, tag: float = 0.04, gap: float = 0.01) -> np.ndarray:
    """Corner positions (m, on ``z = 0``) of a ``tags x tags`` grid of square tags, centred on the origin."""
    pitch = tag + gap
    c0 = -(tags * pitch - gap) / 2
    out = []
    for i in range(tags):
        for j in range(tags):
            x0, y0 = c0 + i * pitch, c0 + j * pitch
            out += [(x0, y0), (x0 + tag, y0), (x0 + tag, y0 + tag), (x0, y0 + tag)]
    return np.array(out)


def pnp_baseline(camera_pose: Pose, k: Intrinsics, rng, noise_px: float = 0.5, corners=None) -> Pose:
    """Planar PnP on the visible fiducial corners with i.i.d. Gaussian pixel noise."""
    xy = fiducial_corners() if corners is None else corners
    X = np.column_stack([xy, np.zeros(len(xy))])
    Xc = camera_pose.inverse().apply(X)
    front = Xc[:, 2] > 1e-6
    px = project(k, Xc[front])
    inside = (px[:, 0] >= 0) & (px[:, 0] <= k.width - 1) & (px[:, 1] >= 0) & (px[:, 1] <= k.height - 1)
    if inside.sum() < 4:
        raise DegenerateConfiguration("fewer than 4 fiducial corners in view")
    noisy = px[inside] + rng.normal(0.0, noise_px, size=(int(inside.sum()), 2))
    return planar_pnp(xy[front][inside], noisy, k)


# -- reports ------------------------------------------------------------------------


@dataclass
class ErrorSummary:
    trans_avg: float
    trans_std: float
    trans_max: float
    rot_avg: float
    rot_std: float
    rot_max: float
    count: int
    failures: int

    @property
    def failure_rate(self) -> float:
        n = self.count + self.failures
        return self.failures / n if n else 0.0


def summarize(trans_mm, rot_deg, failures: int = 0) -> ErrorSummary:
    t = np.asarray(trans_mm, dtype=float)
    r = np.asarray(rot_deg, dtype=float)
    if len(t) == 0:
        nan = float("nan")
        return ErrorSummary(nan, nan, nan, nan, nan, nan, 0, failures)
    return ErrorSummary(float(t.mean()), float(t.std()), float(t.max()),
                        float(r.mean()), float(r.std()), float(r.max()), int(len(t)), int(failures))


@dataclass(eq=False)
class ErrorReport:
    mode: str
    trans_mm: list  # per waypoint, None for failures
    rot_deg: list
    summary: ErrorSummary
    breakdown: dict = field(default_factory=dict)  # mode -> ErrorSummary
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            **self.meta,
            "mode": self.mode,
            "summary": _summary_dict(self.summary),
            "breakdown": {m: _summary_dict(s) for m, s in self.breakdown.items()},
        }


def _summary_dict(s: ErrorSummary) -> dict:
    d = asdict(s)
    d["failure_rate"] = s.failure_rate
    return d


def error_report(estimates, gts, mode: str = "dual", breakdown: dict | None = None,
                 meta: dict | None = None) -> ErrorReport:
    """Per-waypoint errors of ``estimates`` (None = failure) against ``gts``."""
    tr, rot = [], []
    for est, gt in zip(estimates, gts):
        if est is None:
            tr.append(None)
            rot.append(None)
            continue
        dt, da = pose_errors(est, gt)
        tr.append(dt * 1e3)
        rot.append(math.degrees(da))
    ok = [i for i, v in enumerate(tr) if v is not None]
    summary = summarize([tr[i] for i in ok], [rot[i] for i in ok], len(tr) - len(ok))
    return ErrorReport(mode, tr, rot, summary, breakdown or {}, meta or {})


@dataclass(eq=False)
class ExperimentResult:
    report: ErrorReport
    trajectory: Trajectory
    waypoints: list
    by_mode: dict  # mode -> ErrorReport


def run_experiment(traj: Trajectory, rig: CameraRig | None = None, workspace: Workspace | None = None,
                   profile: Profile | str = "clean", cfg: ServoConfig | None = None,
                   correction: Sim2RealCorrection | None = None, camera_mode: str = "dual",
                   seed: int = 0, workers: int = 1) -> ExperimentResult:
    if camera_mode not in MODES:
        raise UnknownKind(f"unknown camera mode {camera_mode!r}")
    profile = get_profile(profile) if isinstance(profile, str) else profile
    cameras = ("left", "right") if camera_mode == "dual" else (camera_mode,)
    wps = estimate_poses(traj.poses, rig, workspace, profile, cfg, correction, seed, cameras, workers)
    modes = MODES if camera_mode == "dual" else (camera_mode,)
    by_mode = {m: error_report([w.estimates[m] for w in wps], traj.poses, m) for m in modes}
    iters = [n for w in wps for n in w.iterations.values()]
    meta = {
        "trajectory": traj.kind,
        "waypoints": len(traj),
        "profile": profile.name,
        "seed": int(seed),
        "corrected": correction is not None,
        "iterations_mean": float(np.mean(iters)) if iters else float("nan"),
        "iterations_std": float(np.std(iters)) if iters else float("nan"),
    }
    main = by_mode[camera_mode]
    report = ErrorReport(camera_mode, main.trans_mm, main.rot_deg, main.summary,
                         {m: r.summary for m, r in by_mode.items()}, meta)
    return ExperimentResult(report, traj, wps, by_mode)


def write_outputs(result: ExperimentResult, outdir) -> None:
    """``report.json``, ``poses_est.csv``, ``poses_gt.csv``, ``errors.csv`` and two SVG plots."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    rep = result.report
    (out / "report.json").write_text(json.dumps(rep.to_dict(), indent=2, sort_keys=True) + "\n")
    stamps = result.trajectory.stamps
    est = [(float(stamps[w.index]), w.estimates[rep.mode]) for w in result.waypoints
           if w.estimates[rep.mode] is not None]
    write_pose_csv(out / "poses_est.csv", est)
    write_pose_csv(out / "poses_gt.csv", [(float(s), p) for s, p in zip(stamps, result.trajectory.poses)])
    with open(out / "errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", "trans_mm", "rot_deg", "camera_mode", "converged"])
        for mode, r in result.by_mode.items():
            for i, (t, a) in enumerate(zip(r.trans_mm, r.rot_deg)):
                ok = t is not None
                w.writerow([i, repr(t) if ok else "nan", repr(a) if ok else "nan", mode, int(ok)])
    (out / "trajectory.svg").write_text(trajectory_svg(result))
    (out / "errors.svg").write_text(error_svg(result))


def read_errors_csv(path, mode: str) -> tuple[list, list]:
    tr, rot = [], []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            if row["camera_mode"] == mode and row["converged"] == "1":
                tr.append(float(row["trans_mm"]))
                rot.append(float(row["rot_deg"]))
    return tr, rot


# -- plots (plain SVG, no plotting dependency) -----------------------------------


def _polyline(pts, color, width=1.5) -> str:
    s = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{s}"/>'


def trajectory_svg(result: ExperimentResult, size: int = 480) -> str:
    gt = np.array([p.translation[:2] for p in result.trajectory.poses])
    est = [w.estimates[result.report.mode] for w in result.waypoints]
    est = np.array([e.translation[:2] for e in est if e is not None]).reshape(-1, 2)
    allp = np.vstack([gt, est]) if len(est) else gt
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    scale = (size - 40) / max(float((hi - lo).max()), 1e-9)
    tf = lambda p: [(20 + (x - lo[0]) * scale, size - 20 - (y - lo[1]) * scale) for x, y in p]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
             '<rect width="100%" height="100%" fill="white"/>', _polyline(tf(gt), "#444", 2.5)]
    if len(est):
        parts.append(_polyline(tf(est), "#d62728"))
    parts.append('<text x="20" y="16" font-size="12">ground truth (grey) vs estimate (red), top view</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def error_svg(result: ExperimentResult, width: int = 640, height: int = 240) -> str:
    gt = result.trajectory.poses
    rows = []
    for w in result.waypoints:
        e = w.estimates[result.report.mode]
        rows.append(None if e is None else (e.translation - gt[w.index].translation) * 1e3)
    vals = np.array([r for r in rows if r is not None]).reshape(-1, 3)
    span = max(float(np.abs(vals).max()) if len(vals) else 1.0, 1e-6)
    n = max(len(rows) - 1, 1)
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<line x1="20" y1="{height / 2}" x2="{width - 10}" y2="{height / 2}" stroke="#bbb"/>']
    for axis, color in enumerate(("#1f77b4", "#2ca02c", "#d62728")):
        pts = [(20 + i * (width - 30) / n, height / 2 - r[axis] / span * (height / 2 - 20))
               for i, r in enumerate(rows) if r is not None]
        if pts:
            parts.append(_polyline(pts, color))
    parts.append(f'<text x="20" y="14" font-size="12">x/y/z translation error (mm), full scale {span:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
