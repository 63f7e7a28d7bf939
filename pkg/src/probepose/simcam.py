"""Pinhole camera simulator for a textured planar workspace.

The workspace is the plane ``z = 0`` of the world frame, textured with a
pattern image seen from ``+z``. Camera poses are camera-in-world placements
(``X_world = R @ X_cam + t``) with the optical axis along camera ``+z`` and
image rows along camera ``+y``.

Plane-induced homographies follow the sim-to-target convention used by the
servo loop: for two cameras ``S`` and ``G`` with ``rel = T_S^-1 @ T_G`` (the
placement of ``G`` inside ``S``) and the plane ``n . X_S + d = 0`` expressed in
``S``, pixels map as ``p_G ~ K R^T (I + t n^T / d) K^-1 p_S``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BehindCamera, DegeneratePlane, DegeneratePose, InvalidSpec
from .geometry import Pose, Rotation
from .image import reference_pattern, read_png, sample_bilinear, to_uint8

HFOV_DEG = 83.0


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    s: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidSpec("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidSpec("principal point outside the raster")

    @classmethod
    def default(cls) -> "Intrinsics":
        f = 320.0 / math.tan(math.radians(HFOV_DEG / 2))
        return cls(fx=f, fy=f, cx=320.0, cy=180.0, width=640, height=360)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, self.s, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.linalg.inv(self.K)


@dataclass(frozen=True, eq=False)
class Workspace:
    """Textured plane ``z = 0``; the pattern is centred on ``origin`` (meters)."""

    pattern: np.ndarray = field(default_factory=reference_pattern)
    extent: tuple[float, float] = (0.8, 0.8)
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.extent[0] > 0 and self.extent[1] > 0):
            raise InvalidSpec("pattern extent must be positive")

    @property
    def pixel_to_world(self) -> np.ndarray:
        """Affine map from pattern pixel ``(u, v, 1)`` to plane ``(x, y, 1)``.

        Pattern rows run toward ``-y`` so the texture reads unmirrored from above.
        """
        h, w = self.pattern.shape[:2]
        sx, sy = self.extent[0] / w, self.extent[1] / h
        x0 = self.origin[0] - self.extent[0] / 2 + 0.5 * sx
        y0 = self.origin[1] + self.extent[1] / 2 - 0.5 * sy
        return np.array([[sx, 0.0, x0], [0.0, -sy, y0], [0.0, 0.0, 1.0]])

    @property
    def world_to_pixel(self) -> np.ndarray:
        return np.linalg.inv(self.pixel_to_world)

    def world_to_pattern(self, xy: np.ndarray) -> np.ndarray:
        A = self.world_to_pixel
        return np.asarray(xy) @ A[:2, :2].T + A[:2, 2]


@dataclass(frozen=True)
class PlaneSpec:
    """Plane ``n . X + d = 0`` in a camera frame (``d`` > 0 is the camera-plane distance)."""

    normal: np.ndarray
    distance: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidSpec("plane normal must be a unit vector")
        if not self.distance > 0:
            raise InvalidSpec("plane distance must be positive")
        object.__setattr__(self, "normal", n)


def plane_in_camera(camera_pose: Pose) -> PlaneSpec:
    """The workspace plane ``z = 0`` expressed in the camera frame."""
    height = float(camera_pose.translation[2])
    if height <= 0:
        raise DegeneratePose("camera is not above the workspace plane")
    return PlaneSpec(camera_pose.R[2, :].copy(), height)


@dataclass(frozen=True)
class RigCamera:
    name: str
    intrinsics: Intrinsics
    extrinsic: Pose  # camera placement in the probe frame


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple[RigCamera, ...]

    def __post_init__(self):
        if len(self.cameras) not in (1, 2):
            raise InvalidSpec("rig must have one or two cameras")

    def __getitem__(self, name: str) -> RigCamera:
        for cam in self.cameras:
            if cam.name == name:
                return cam
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.cameras]

    def camera_pose(self, probe_pose: Pose, name: str) -> Pose:
        return probe_pose @ self[name].extrinsic

    def probe_pose(self, camera_pose: Pose, name: str) -> Pose:
        return camera_pose @ self[name].extrinsic.inverse()

    @classmethod
    def default(cls, intrinsics: Intrinsics | None = None) -> "CameraRig":
        k = intrinsics or Intrinsics.default()
        d = math.radians
        left = Pose(Rotation.from_rpy(d(30), d(10), 0.0), [0.0, -0.03, -0.05])
        right = Pose(Rotation.from_rpy(d(-30), d(10), d(180)), [0.0, 0.03, -0.05])
        return cls((RigCamera("left", k, left), RigCamera("right", k, right)))


def probe_orientation(tangent=(0.0, 1.0, 0.0)) -> Rotation:
    """Probe frame with ``z`` pointing into the plane and ``y`` along ``tangent``."""
    z = np.array([0.0, 0.0, -1.0])
    y = np.asarray(tangent, dtype=float)
    y = y - np.dot(y, z) * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    return Rotation.from_matrix(np.column_stack([x, y, z]))


# -- projection and homographies --------------------------------------------


def project(k: Intrinsics, x_cam) -> np.ndarray:
    x = np.asarray(x_cam, dtype=float)
    z = x[..., 2]
    if np.any(z <= 1e-9):
        raise BehindCamera("point at or behind the camera centre")
    p = x @ k.K.T
    return p[..., :2] / p[..., 2:3]


def backproject(k: Intrinsics, pixels, plane: PlaneSpec) -> np.ndarray:
    """Intersect pixel rays with ``plane``; returns camera-frame points."""
    px = np.atleast_2d(np.asarray(pixels, dtype=float))
    rays = np.column_stack([px, np.ones(len(px))]) @ k.K_inv.T
    denom = rays @ plane.normal
    lam = -plane.distance / denom
    return rays * lam[:, None]


def normalize_homography(h: np.ndarray) -> np.ndarray:
    if abs(h[2, 2]) < 1e-15:
        raise DegeneratePlane("homography cannot be normalised (H[2,2] = 0)")
    return h / h[2, 2]


def euclidean_homography(rel: Pose, normal, distance: float) -> np.ndarray:
    """Calibrated ``R^T (I + t n^T / d)`` (unnormalised)."""
    n = np.asarray(normal, dtype=float)
    R, t = rel.R, rel.translation
    if abs(float(n @ t) + distance) < 1e-9:
        raise DegeneratePlane("target camera centre lies on the plane")
    return R.T @ (np.eye(3) + np.outer(t, n) / distance)


def plane_homography(k: Intrinsics, rel: Pose, plane: PlaneSpec) -> np.ndarray:
    """Pixel homography S -> G induced by ``plane``, normalised so ``H[2,2] = 1``."""
    g = k.K @ euclidean_homography(rel, plane.normal, plane.distance) @ k.K_inv
    return normalize_homography(g)


def plane_homography_scale(k: Intrinsics, rel: Pose, plane: PlaneSpec) -> float:
    """The normalising factor ``xi`` with ``H = xi * K R^T (I + t n^T/d) K^-1``."""
    g = k.K @ euclidean_homography(rel, plane.normal, plane.distance) @ k.K_inv
    return 1.0 / g[2, 2]


def pattern_homography(k: Intrinsics, camera_pose: Pose, workspace: Workspace) -> np.ndarray:
    """Homography from pattern pixels to camera pixels."""
    Rcw = camera_pose.R.T
    tcw = -Rcw @ camera_pose.translation
    M = np.column_stack([Rcw[:, 0], Rcw[:, 1], tcw])
    return normalize_homography(k.K @ M @ workspace.pixel_to_world)


# -- rendering --------------------------------------------------------------


def render_view(camera_pose: Pose, k: Intrinsics, workspace: Workspace, return_mask: bool = False):
    """Ray-cast the textured plane from ``camera_pose``.

    Each pixel ray is intersected with ``z = 0`` and the pattern is sampled
    bilinearly there; rays missing the pattern render black.
    """
    c = camera_pose.translation
    if c[2] <= 0:
        raise DegeneratePose("camera must be above the workspace plane")
    u = np.arange(k.width, dtype=np.float64)
    v = np.arange(k.height, dtype=np.float64)
    # world ray direction is affine in (u, v): d = M @ (u, v, 1)
    M = camera_pose.R @ k.K_inv
    dx = M[0, 0] * u[None, :] + M[0, 1] * v[:, None] + M[0, 2]
    dy = M[1, 0] * u[None, :] + M[1, 1] * v[:, None] + M[1, 2]
    dz = M[2, 0] * u[None, :] + M[2, 1] * v[:, None] + M[2, 2]
    hits = dz < -1e-12
    lam = np.where(hits, -c[2] / np.where(hits, dz, -1.0), 0.0)
    x = c[0] + lam * dx
    y = c[1] + lam * dy
    A = workspace.world_to_pixel
    pu = np.where(hits, A[0, 0] * x + A[0, 2], -1.0)
    pv = np.where(hits, A[1, 1] * y + A[1, 2], -1.0)
    vals, valid = sample_bilinear(workspace.pattern, pu, pv)
    if not valid.any():
        raise DegeneratePose("no pixel ray intersects the workspace pattern")
    img = to_uint8(vals)
    if return_mask:
        return img, valid
    return img


# -- rig configuration files ------------------------------------------------


def _pose_to_json(p: Pose) -> dict:
    from scipy.spatial.transform import Rotation as _R

    # file angles use the same intrinsic x-y-z sequence as Rotation.from_rpy
    rpy = _R.from_matrix(p.R).as_euler("XYZ", degrees=True)
    return {"translation_m": [float(v) for v in p.translation], "rpy_deg": [float(v) for v in rpy]}


def _pose_from_json(d: dict) -> Pose:
    r, p, y = (math.radians(a) for a in d["rpy_deg"])
    return Pose(Rotation.from_rpy(r, p, y), d["translation_m"])


def rig_to_dict(rig: CameraRig, workspace: Workspace | None = None, pattern_path: str | None = None) -> dict:
    cams = []
    for c in rig.cameras:
        k = c.intrinsics
        cams.append(
            {
                "name": c.name,
                "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "s": k.s,
                               "width": k.width, "height": k.height},
                "extrinsic": _pose_to_json(c.extrinsic),
            }
        )
    ws = workspace or Workspace()
    return {
        "cameras": cams,
        "plane": {"extent_m": list(ws.extent), "origin_m": list(ws.origin)},
        "pattern": pattern_path,
    }


def rig_from_dict(d: dict) -> tuple[CameraRig, Workspace]:
    cams = []
    for c in d["cameras"]:
        ki = c["intrinsics"]
        k = Intrinsics(ki["fx"], ki["fy"], ki["cx"], ki["cy"], int(ki["width"]), int(ki["height"]), ki.get("s", 0.0))
        cams.append(RigCamera(c["name"], k, _pose_from_json(c["extrinsic"])))
    plane = d.get("plane", {})
    pattern = read_png(d["pattern"]) if d.get("pattern") else reference_pattern()
    ws = Workspace(pattern, tuple(plane.get("extent_m", (0.8, 0.8))), tuple(plane.get("origin_m", (0.0, 0.0))))
    return CameraRig(tuple(cams)), ws


def load_rig(path) -> tuple[CameraRig, Workspace]:
    path = Path(path)
    d = json.loads(path.read_text())
    if d.get("pattern") and not Path(d["pattern"]).is_absolute():
        d["pattern"] = str(path.parent / d["pattern"])
    return rig_from_dict(d)


def save_rig(path, rig: CameraRig, workspace: Workspace | None = None, pattern_path: str | None = None) -> None:
    Path(path).write_text(json.dumps(rig_to_dict(rig, workspace, pattern_path), indent=2) + "\n")
