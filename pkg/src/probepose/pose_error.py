"""Relative pose from a plane-induced homography, and a planar PnP baseline.

``decompose_homography`` inverts ``H = xi K R^T (I + t n^T / d) K^-1`` for a
known plane ``(n, d)``: the calibrated matrix is scaled by its middle
singular value, ``R`` comes from an orthogonal Procrustes fit on the plane's
tangent directions, ``t`` from the normal direction, and a short
Gauss-Newton polish minimises the Frobenius residual with the scale solved in
closed form at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionFailed, DegenerateConfiguration
from .geometry import Pose, Rotation, so3_exp
from .registration import dlt_homography
from .simcam import Intrinsics

MAX_NORMAL_DEVIATION = np.radians(45.0)
RESIDUAL_TOL = 1e-3
NORMAL_CHECK_MIN = 0.05


@dataclass(frozen=True, eq=False)
class FeatureError:
    """Pose of the target camera in the simulated camera frame, as a servo feature."""

    translation: np.ndarray
    rotation: np.ndarray  # axis-angle, radians
    scale: float = 1.0
    residual: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3))
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @classmethod
    def zero(cls) -> "FeatureError":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_pose(cls, rel: Pose, scale: float = 1.0, residual: float = 0.0) -> "FeatureError":
        return cls(rel.translation, rel.rotation.as_axis_angle(), scale, residual)

    @property
    def trans_norm(self) -> float:
        return float(np.linalg.norm(self.translation))

    @property
    def rot_norm(self) -> float:
        return float(np.linalg.norm(self.rotation))

    def as_pose(self) -> Pose:
        return Pose(Rotation.from_axis_angle(self.rotation), self.translation)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])


def _model(R: np.ndarray, t: np.ndarray, n: np.ndarray, d: float) -> np.ndarray:
    return R.T @ (np.eye(3) + np.outer(t, n) / d)


def _fit_scale(target: np.ndarray, model: np.ndarray) -> float:
    return float(np.sum(target * model) / np.sum(model * model))


def frobenius_residual(h: np.ndarray, k: Intrinsics, R, t, n, d) -> float:
    """``min_xi || H - xi K R^T (I + t n^T/d) K^-1 ||_F`` for the given pose."""
    g = k.K @ _model(R, t, n, d) @ k.K_inv
    return float(np.linalg.norm(h - _fit_scale(h, g) * g))


def _candidates(A: np.ndarray, n: np.ndarray, d: float):
    sv = np.linalg.svd(A, compute_uv=False)
    sigma2 = sv[1]
    if sigma2 <= 1e-12:
        return
    P = np.eye(3) - np.outer(n, n)
    for sign in (1.0, -1.0):
        M = sign * A / sigma2
        U, _, Vt = np.linalg.svd(M @ P)
        # R^T ~= M on the plane directions: maximise tr(R M P)
        D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
        R = Vt.T @ D @ U.T
        t = d * (R @ ((M - R.T) @ n))
        yield sign * sigma2, M, R, t


def _normal_ok(M: np.ndarray, R: np.ndarray, n: np.ndarray) -> bool:
    E = R @ M - np.eye(3)  # = t n^T / d for an exact plane homography
    if np.linalg.norm(E) < NORMAL_CHECK_MIN:
        return True  # translation too small for its direction to be measurable
    _, _, Vt = np.linalg.svd(E)
    cosang = min(abs(float(Vt[0] @ n)), 1.0)
    return np.arccos(cosang) <= MAX_NORMAL_DEVIATION


def _polish(h: np.ndarray, k: Intrinsics, R: np.ndarray, t: np.ndarray, n: np.ndarray, d: float,
            max_steps: int = 10, pixel_space: bool = False):
    """Gauss-Newton on the Frobenius residual with a backtracking line search.

    By default the residual lives in calibrated coordinates (``K^-1 H K``,
    unit Frobenius norm), where all nine entries carry comparable weight.
    """
    K, Kinv = (k.K, k.K_inv) if pixel_space else (np.eye(3), np.eye(3))
    hn = h if pixel_space else k.K_inv @ h @ k.K
    hn = hn / np.linalg.norm(hn)

    def residual(R_, t_):
        g = K @ _model(R_, t_, n, d) @ Kinv
        return (hn - _fit_scale(hn, g) * g).ravel()

    def perturb(x):
        return R @ so3_exp(x[3:]), t + x[:3]

    r = residual(R, t)
    cost = float(r @ r)
    for _ in range(max_steps):
        J = np.empty((9, 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = 1e-7
            J[:, j] = (residual(*perturb(e)) - residual(*perturb(-e))) / 2e-7
        dx, *_ = np.linalg.lstsq(J, -r, rcond=None)
        alpha = 1.0
        improved = False
        while alpha > 1e-4:
            R_new, t_new = perturb(alpha * dx)
            r_new = residual(R_new, t_new)
            c_new = float(r_new @ r_new)
            if c_new < cost:
                R, t, r, cost = R_new, t_new, r_new, c_new
                improved = True
                break
            alpha *= 0.5
        if not improved or np.linalg.norm(alpha * dx) < 1e-13:
            break
    return R, t


def decompose_homography(h, k: Intrinsics, normal, distance: float, polish: bool = True,
                         residual_tol: float = RESIDUAL_TOL) -> FeatureError:
    """Recover ``(xi, R, t)`` of the target view from a sim->target homography."""
    h = np.asarray(getattr(h, "matrix", h), dtype=float)
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if not distance > 0:
        raise DecompositionFailed("plane distance must be positive")
    if abs(np.linalg.det(h)) <= 1e-12:
        raise DecompositionFailed("homography is singular")
    A = k.K_inv @ h @ k.K
    best = None
    for xi, M, R, t in _candidates(A, n, distance):
        if distance + float(n @ t) <= 0:
            continue  # target camera would sit behind the plane
        if not _normal_ok(M, R, n):
            continue
        res = float(np.linalg.norm(M - _model(R, t, n, distance)))
        if best is None or res < best[0]:
            best = (res, xi, R, t)
    if best is None:
        raise DecompositionFailed("no candidate passes cheirality and normal checks")
    _, xi, R, t = best
    if polish:
        R, t = _polish(h, k, R, t, n, distance)
    g = _model(R, t, n, distance)
    xi_fit = _fit_scale(A, g)
    A_n = A / np.linalg.norm(A)
    resid = float(np.linalg.norm(A_n - _fit_scale(A_n, g) * g))
    if resid > residual_tol:
        raise DecompositionFailed(f"Frobenius residual {resid:.2e} exceeds {residual_tol:.0e}")
    rel = Pose.from_rt(R, t)
    return FeatureError.from_pose(rel, scale=abs(xi_fit), residual=resid)


# -- planar PnP baseline ------------------------------------------------------


def _project_plane(R: np.ndarray, t: np.ndarray, k: Intrinsics, xy: np.ndarray) -> np.ndarray:
    X = xy @ R[:, :2].T + t
    p = X @ k.K.T
    return p[:, :2] / p[:, 2:3]


def planar_pnp(plane_xy, pixels, k: Intrinsics, max_steps: int = 20) -> Pose:
    """Camera pose (camera-in-world, plane ``z = 0``) from plane/pixel correspondences."""
    xy = np.asarray(plane_xy, dtype=float)
    px = np.asarray(pixels, dtype=float)
    if len(xy) < 4 or len(xy) != len(px):
        raise DegenerateConfiguration("planar PnP needs at least 4 correspondences")
    c = xy - xy.mean(axis=0)
    sv = np.linalg.svd(c, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1e-12):
        raise DegenerateConfiguration("plane points are collinear")
    H = dlt_homography(xy, px)
    if H is None:
        raise DegenerateConfiguration("homography from plane points is degenerate")
    B = k.K_inv @ H
    lam = 2.0 / (np.linalg.norm(B[:, 0]) + np.linalg.norm(B[:, 1]))
    if (lam * B[:, 2])[2] < 0:
        lam = -lam
    r1, r2, t = lam * B[:, 0], lam * B[:, 1], lam * B[:, 2]
    U, _, Vt = np.linalg.svd(np.column_stack([r1, r2, np.cross(r1, r2)]))
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt

    def residual(R_, t_):
        return (_project_plane(R_, t_, k, xy) - px).ravel()

    r = residual(R, t)
    cost = float(r @ r)
    for _ in range(max_steps):
        J = np.empty((len(r), 6))
        for j in range(6):
            e = np.zeros(6)
            e[j] = 1e-7
            Rp, tp = so3_exp(e[3:]) @ R, t + e[:3]
            Rm, tm = so3_exp(-e[3:]) @ R, t - e[:3]
            J[:, j] = (residual(Rp, tp) - residual(Rm, tm)) / 2e-7
        dx, *_ = np.linalg.lstsq(J, -r, rcond=None)
        alpha = 1.0
        improved = False
        while alpha > 1e-4:
            R_new, t_new = so3_exp(alpha * dx[3:]) @ R, t + alpha * dx[:3]
            r_new = residual(R_new, t_new)
            if float(r_new @ r_new) < cost:
                R, t, r, cost = R_new, t_new, r_new, float(r_new @ r_new)
                improved = True
                break
            alpha *= 0.5
        if not improved or np.linalg.norm(alpha * dx) < 1e-14:
            break
    # (R, t) maps world to camera; report the camera placement in the world
    return Pose.from_rt(R, t).inverse()
