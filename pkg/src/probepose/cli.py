"""Command-line entry point: ``probepose <subcommand> ...``.

Poses on the command line are ``X Y Z ROLL PITCH YAW`` in mm and degrees
(intrinsic x-y-z angles). Files keep the SI formats of the owning modules.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ProbePoseError
from .fusion import fuse
from .geometry import Pose, Rotation, read_pose_csv
from .harness import (MODES, calibrate_profile, generate_trajectory, get_profile, perturb, run_experiment,
                      write_outputs)
from .image import generate_pattern, read_png, write_png
from .recon import (DEFAULT_PIXEL_PITCH, DEFAULT_VOXEL_PITCH, compound, cylinder_phantom, load_slices,
                    load_volume, save_volume, volume_metrics)
from .registration import RansacConfig, detect_and_describe, dump_matches, estimate_homography, match
from .restoration import restore_view, side_by_side
from .servo import ServoConfig, run_session, write_trace
from .sim2real import CalibrationPair, apply_correction, calibrate, load_correction, save_correction
from .simcam import CameraRig, Workspace, load_rig, render_view


class UsageError(Exception):
    pass


# -- run configuration ------------------------------------------------------------


@dataclass
class RunConfig:
    rig: str | None = None
    pattern: str | None = None
    servo: dict = field(default_factory=dict)
    profile: str = "clean"
    seed: int = 0
    out: str | None = None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise UsageError(f"config file {path} is not valid JSON: {err}") from None
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        base = Path(path).parent
        for key in ("rig", "pattern"):
            if d.get(key) and not Path(d[key]).is_absolute():
                d[key] = str(base / d[key])
        return cls(**d)

    def validate(self) -> None:
        for key in ("rig", "pattern"):
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise UsageError(f"{key} file not found: {p}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise UsageError("seed must be an integer in [0, 2^64)")


def servo_config(overrides: dict, seed: int) -> ServoConfig:
    d = dict(overrides)
    names = {f.name for f in fields(ServoConfig)}
    extra = set(d) - names - {"trans_tol_mm", "rot_tol_deg"}
    if extra:
        raise UsageError(f"unknown servo parameters: {sorted(extra)}")
    if "trans_tol_mm" in d:
        d["trans_tol"] = d.pop("trans_tol_mm") * 1e-3
    if "rot_tol_deg" in d:
        d["rot_tol"] = math.radians(d.pop("rot_tol_deg"))
    d.setdefault("seed", seed)
    return ServoConfig(**d)


def resolve(args) -> tuple[RunConfig, CameraRig, Workspace, ServoConfig]:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("rig", "pattern", "seed", "out"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if getattr(args, "profile", None):
        cfg.profile = args.profile
    if getattr(args, "clean", False):
        cfg.profile = "clean"
    servo = dict(cfg.servo)
    for key in ("max_iter", "lambda_t", "lambda_r"):
        v = getattr(args, key, None)
        if v is not None:
            servo[key] = v
    cfg.validate()
    if cfg.rig:
        rig, ws = load_rig(cfg.rig)
    else:
        rig, ws = CameraRig.default(), Workspace()
    if cfg.pattern:
        ws = Workspace(read_png(cfg.pattern), ws.extent, ws.origin)
    return cfg, rig, ws, servo_config(servo, cfg.seed)


# -- unit conversion at the boundary -------------------------------------------------


def pose_from_args(vals) -> Pose:
    x, y, z, r, p, yaw = (float(v) for v in vals)
    return Pose(Rotation.from_rpy(*(math.radians(a) for a in (r, p, yaw))), [x * 1e-3, y * 1e-3, z * 1e-3])


def pose_report(p: Pose) -> dict:
    from scipy.spatial.transform import Rotation as _R

    rpy = _R.from_matrix(p.R).as_euler("XYZ", degrees=True)
    return {
        "translation_mm": [float(v) * 1e3 for v in p.translation],
        "rpy_deg": [float(v) for v in rpy],
        "quaternion_wxyz": [float(v) for v in p.rotation.q],
    }


def _read_image(path) -> np.ndarray:
    if not Path(path).is_file():
        raise UsageError(f"image not found: {path}")
    return read_png(path)


def _camera(rig: CameraRig, name: str):
    try:
        return rig[name]
    except KeyError:
        raise UsageError(f"rig has no camera named {name!r}") from None


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- subcommands ----------------------------------------------------------------------


def cmd_gen_pattern(args) -> int:
    write_png(args.out, generate_pattern(args.size, args.cell, args.seed))
    return 0


def cmd_render(args) -> int:
    cfg, rig, ws, _ = resolve(args)
    cam = _camera(rig, args.camera)
    img = render_view(pose_from_args(args.pose) @ cam.extrinsic, cam.intrinsics, ws)
    profile = get_profile(cfg.profile)
    if profile.name != "clean":
        img = perturb(img, profile, np.random.default_rng(cfg.seed))
    write_png(args.out, img)
    return 0


def cmd_restore(args) -> int:
    cfg, rig, ws, _ = resolve(args)
    live = _read_image(args.live)
    restored = restore_view(live, ws.pattern, RansacConfig(seed=cfg.seed))
    write_png(args.out, restored.image)
    if args.side_by_side:
        write_png(args.side_by_side, side_by_side(live, restored))
    if args.dump_matches:
        m = match(detect_and_describe(restored.image), detect_and_describe(live), src="restored", dst="live")
        dump_matches(args.dump_matches, m, estimate_homography(m, RansacConfig(seed=cfg.seed)))
    _print({"inlier_ratio": restored.inlier_ratio})
    return 0


def cmd_estimate(args) -> int:
    cfg, rig, ws, scfg = resolve(args)
    if not (args.left or args.right):
        raise UsageError("give at least one of --left / --right")
    init = pose_from_args(args.init)
    results = {}
    for name in ("left", "right"):
        path = getattr(args, name)
        if not path:
            continue
        cam = _camera(rig, name)
        restored = restore_view(_read_image(path), ws.pattern, RansacConfig(seed=cfg.seed))
        res = run_session(restored, cam, ws, init @ cam.extrinsic, scfg)
        results[name] = res
        if args.trace_dir:
            Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
            write_trace(Path(args.trace_dir) / f"trace_{name}.csv", res)
    fused = fuse(results.get("left"), results.get("right"))
    pose = fused.pose
    if args.calibration:
        if not Path(args.calibration).is_file():
            raise UsageError(f"calibration file not found: {args.calibration}")
        pose = apply_correction(load_correction(args.calibration), pose)
    out = {
        "pose": pose_report(pose),
        "cameras": list(fused.cameras),
        "weights": list(fused.weights),
        "sessions": {n: {"iterations": r.iterations, "converged": r.converged,
                         "residual_mm": r.residual.trans_norm * 1e3,
                         "residual_deg": math.degrees(r.residual.rot_norm)} for n, r in results.items()},
        "corrected": bool(args.calibration),
    }
    _print(out)
    return 0


def cmd_calibrate(args) -> int:
    cfg, rig, ws, scfg = resolve(args)
    if args.gt and args.est:
        gt = [p for _, p in read_pose_csv(args.gt)]
        est = [p for _, p in read_pose_csv(args.est)]
        if len(gt) != len(est):
            raise UsageError("ground-truth and estimate files have different lengths")
        corr = calibrate([CalibrationPair(g, e) for g, e in zip(gt, est)], zeta=args.zeta)
    elif args.gt or args.est:
        raise UsageError("--gt and --est go together")
    else:
        corr = calibrate_profile(rig, ws, cfg.profile, scfg, cfg.seed, workers=args.workers)
    save_correction(args.out, corr)
    _print({"U": pose_report(corr.U), "V": pose_report(corr.V), "loss": corr.loss, "pairs": corr.pair_count})
    return 0


def cmd_eval_traj(args) -> int:
    cfg, rig, ws, scfg = resolve(args)
    if not cfg.out:
        raise UsageError("an output directory is required (--out or config 'out')")
    out = Path(cfg.out)
    profile = get_profile(cfg.profile)
    traj = generate_trajectory(args.kind, args.samples)
    corr = None
    if args.calibration:
        if not Path(args.calibration).is_file():
            raise UsageError(f"calibration file not found: {args.calibration}")
        corr = load_correction(args.calibration)
    elif profile.planted:
        corr = calibrate_profile(rig, ws, profile, scfg, cfg.seed, workers=args.workers)
        out.mkdir(parents=True, exist_ok=True)
        save_correction(out / "calibration.json", corr)
    result = run_experiment(traj, rig, ws, profile, scfg, corr, args.mode, cfg.seed, args.workers)
    write_outputs(result, out)
    s = result.report.summary
    print(f"{args.kind}/{args.mode}/{profile.name}: trans {s.trans_avg:.3f} +/- {s.trans_std:.3f} mm, "
          f"rot {s.rot_avg:.3f} +/- {s.rot_std:.3f} deg, failures {s.failures}/{s.count + s.failures}")
    return 0


def cmd_reconstruct(args) -> int:
    voxel = args.voxel_mm * 1e-3
    if args.phantom:
        slices, _ = cylinder_phantom(pitch=voxel)
    else:
        if not (args.masks and args.poses):
            raise UsageError("give --masks and --poses, or --phantom")
        poses = [p for _, p in read_pose_csv(args.poses)]
        slices = load_slices(args.masks, poses, args.pixel_pitch_mm * 1e-3)
    vol = compound(slices, voxel)
    save_volume(args.out, vol)
    _print({"voxels": vol.count, "volume_mm3": vol.volume * 1e9})
    return 0


def cmd_metrics(args) -> int:
    for p in (args.a, args.b):
        if not Path(p).is_file():
            raise UsageError(f"volume file not found: {p}")
    m = volume_metrics(load_volume(args.a), load_volume(args.b))
    _print({"hausdorff_mm": m["hausdorff"], "chamfer_mm": m["chamfer"], "dice": m["dice"], "jaccard": m["jaccard"]})
    return 0


# -- parser ---------------------------------------------------------------------------------


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probepose", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--rig", help="rig JSON (default: built-in two-camera rig)")
    common.add_argument("--pattern", help="workspace pattern PNG (default: shipped pattern)")
    common.add_argument("--seed", type=_seed, help="master seed (default 0)")

    servo = argparse.ArgumentParser(add_help=False)
    servo.add_argument("--max-iter", type=int, help="servo iteration limit")
    servo.add_argument("--lambda-t", type=float, help="translation gain")
    servo.add_argument("--lambda-r", type=float, help="rotation gain")

    p = sub.add_parser("gen-pattern", help="write the seeded Voronoi workspace texture")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--cell", type=float, default=14.0, help="mean cell spacing (px)")
    p.add_argument("--seed", type=_seed, default=7)
    p.set_defaults(func=cmd_gen_pattern)

    p = sub.add_parser("render", parents=[common], help="render one rig camera at a probe pose")
    p.add_argument("--pose", nargs=6, required=True, metavar=("X", "Y", "Z", "ROLL", "PITCH", "YAW"),
                   help="probe pose in mm / deg")
    p.add_argument("--camera", choices=("left", "right"), default="left")
    p.add_argument("--profile", help="perturbation profile (clean, paperlike, occlusion40)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("restore", parents=[common], help="replace a live frame by the registered pattern")
    p.add_argument("--live", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--side-by-side", help="write a live | restored debug PNG")
    p.add_argument("--dump-matches", help="write matches and inliers as JSON")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("estimate", parents=[common, servo], help="restore, servo, fuse and correct one frame pair")
    p.add_argument("--left", help="left camera PNG")
    p.add_argument("--right", help="right camera PNG")
    p.add_argument("--init", nargs=6, required=True, metavar=("X", "Y", "Z", "ROLL", "PITCH", "YAW"),
                   help="initial probe pose in mm / deg")
    p.add_argument("--calibration", help="Sim2Real correction JSON")
    p.add_argument("--trace-dir", help="write per-camera convergence traces here")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("calibrate", parents=[common, servo], help="fit the Sim2Real correction")
    p.add_argument("--gt", help="ground-truth pose CSV")
    p.add_argument("--est", help="estimated pose CSV (same order)")
    p.add_argument("--profile", help="simulate calibration pairs under this profile (when no CSVs)")
    p.add_argument("--zeta", type=float, default=0.1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("eval-traj", parents=[common, servo], help="evaluate a trajectory end to end")
    p.add_argument("--kind", choices=("u_shape", "spiral"), default="u_shape")
    p.add_argument("--mode", choices=MODES, default="dual")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--clean", action="store_true", help="shorthand for --profile clean")
    g.add_argument("--profile", help="perturbation profile (clean, paperlike, occlusion40)")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--calibration", help="Sim2Real correction JSON (default: calibrate if the profile plants an offset)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_eval_traj)

    p = sub.add_parser("reconstruct", help="compound slice masks into a voxel volume")
    p.add_argument("--masks", nargs="+", help="mask PNGs, one per pose")
    p.add_argument("--poses", help="probe pose CSV")
    p.add_argument("--phantom", choices=("cylinder",), help="use a synthetic phantom instead")
    p.add_argument("--pixel-pitch-mm", type=float, default=DEFAULT_PIXEL_PITCH * 1e3)
    p.add_argument("--voxel-mm", type=float, default=DEFAULT_VOXEL_PITCH * 1e3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("metrics", help="compare two voxel volumes")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)  # exits 2 on usage errors and unknown flags
    try:
        return args.func(args)
    except UsageError as err:
        ap.print_usage(sys.stderr)
        print(f"probepose: error: {err}", file=sys.stderr)
        return 2
    except ProbePoseError as err:
        print(f"{type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
