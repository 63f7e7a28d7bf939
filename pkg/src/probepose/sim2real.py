"""Sim2Real offset calibration.

The simulated replica and the physical rig differ by two fixed rigid
transforms: ``M = U @ N @ V`` relates a ground-truth pose ``M`` to the
pipeline estimate ``N``. ``calibrate`` recovers ``U`` and ``V`` from paired
poses by minimising

    sum_i ||t_m - t_c|| + zeta * angle(R_m, R_c),     (R_c, t_c) = U N_i V

with Levenberg-Marquardt over a 12-dim twist parameterisation. The loss is a
sum of norms, not of squares, so each LM step works on a reweighted
least-squares surrogate (weights ``1/||.||`` from the current iterate) and is
accepted only when it lowers the true loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateSet, NonConvergence
from .geometry import Pose, Rotation, se3_exp

ZETA = 0.1
_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class CalibrationPair:
    ground_truth: Pose
    estimate: Pose


@dataclass(frozen=True, eq=False)
class Sim2RealCorrection:
    U: Pose
    V: Pose
    loss: float = 0.0
    pair_count: int = 0
    zeta: float = ZETA

    def __post_init__(self):
        if self.loss < 0:
            raise ValueError("loss must be non-negative")

    @classmethod
    def identity(cls) -> "Sim2RealCorrection":
        return cls(Pose.identity(), Pose.identity())

    def inverse(self) -> "Sim2RealCorrection":
        """The correction undoing this one: ``U^-1 (U N V) V^-1 = N``."""
        return Sim2RealCorrection(self.U.inverse(), self.V.inverse(), 0.0, 0, self.zeta)


def apply_correction(c: Sim2RealCorrection, estimate: Pose) -> Pose:
    return c.U @ estimate @ c.V


def _angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    c = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def pair_losses(pairs, U: Pose, V: Pose, zeta: float = ZETA) -> np.ndarray:
    out = np.empty(len(pairs))
    for i, p in enumerate(pairs):
        c = U @ p.estimate @ V
        out[i] = np.linalg.norm(p.ground_truth.translation - c.translation) + zeta * _angle(p.ground_truth.R, c.R)
    return out


def check_diversity(pairs, min_spread: float = math.radians(1.0)) -> None:
    """Raise DegenerateSet unless estimate rotations vary about at least two axes."""
    if len(pairs) < 4:
        raise DegenerateSet(f"need at least 4 pairs, got {len(pairs)}")
    R0 = pairs[0].estimate.rotation
    vecs = np.array([(R0.inverse() * p.estimate.rotation).as_axis_angle() for p in pairs[1:]])
    sv = np.linalg.svd(vecs, compute_uv=False)
    if len(sv) < 2 or sv[1] < min_spread:
        raise DegenerateSet("rotations span fewer than two axes; U and V are not separable")


def _unpack(x: np.ndarray, U0: Pose, V0: Pose) -> tuple[Pose, Pose]:
    return se3_exp(x[:6]) @ U0, V0 @ se3_exp(x[6:])


def _residuals(pairs, U: Pose, V: Pose, zeta: float, wt: np.ndarray, wr: np.ndarray) -> np.ndarray:
    r = np.empty((len(pairs), 6))
    for i, p in enumerate(pairs):
        c = U @ p.estimate @ V
        r[i, :3] = math.sqrt(wt[i]) * (c.translation - p.ground_truth.translation)
        dR = Rotation.from_matrix(p.ground_truth.R.T @ c.R).as_axis_angle()
        r[i, 3:] = math.sqrt(zeta * wr[i]) * dR
    return r.ravel()


def _weights(pairs, U: Pose, V: Pose) -> tuple[np.ndarray, np.ndarray]:
    wt = np.empty(len(pairs))
    wr = np.empty(len(pairs))
    for i, p in enumerate(pairs):
        c = U @ p.estimate @ V
        wt[i] = 1.0 / max(np.linalg.norm(c.translation - p.ground_truth.translation), _EPS)
        wr[i] = 1.0 / max(_angle(p.ground_truth.R, c.R), _EPS)
    # keep the surrogate well scaled: only relative weights matter
    s = np.median(np.concatenate([wt, wr]))
    return wt / s, wr / s


def calibrate(pairs, zeta: float = ZETA, max_iter: int = 200, step_tol: float = 1e-10,
              patience: int = 20, check: bool = True) -> Sim2RealCorrection:
    pairs = list(pairs)
    if check:
        check_diversity(pairs)
    U, V = Pose.identity(), Pose.identity()
    loss = float(pair_losses(pairs, U, V, zeta).sum())
    mu = 1e-3
    stalled = 0
    h = 1e-7
    for _ in range(max_iter):
        if loss < 1e-13:
            break
        wt, wr = _weights(pairs, U, V)
        r0 = _residuals(pairs, U, V, zeta, wt, wr)
        J = np.empty((r0.size, 12))
        for j in range(12):
            e = np.zeros(12)
            e[j] = h
            Up, Vp = _unpack(e, U, V)
            Um, Vm = _unpack(-e, U, V)
            J[:, j] = (_residuals(pairs, Up, Vp, zeta, wt, wr) - _residuals(pairs, Um, Vm, zeta, wt, wr)) / (2 * h)
        JtJ = J.T @ J
        g = J.T @ r0
        accepted = False
        while True:
            A = JtJ + mu * np.diag(np.maximum(np.diag(JtJ), 1e-12))
            dx = np.linalg.solve(A, -g)
            Un, Vn = _unpack(dx, U, V)
            new_loss = float(pair_losses(pairs, Un, Vn, zeta).sum())
            if new_loss < loss:
                U, V, loss = Un, Vn, new_loss
                mu = max(mu / 3.0, 1e-12)
                accepted = True
                break
            mu *= 4.0
            if np.linalg.norm(dx) < step_tol or mu > 1e12:
                break
        if np.linalg.norm(dx) < step_tol:
            break
        if accepted:
            stalled = 0
        else:
            stalled += 1
            if stalled >= patience:
                raise NonConvergence(f"loss stuck at {loss:.3e} for {patience} iterations")
    return Sim2RealCorrection(U, V, loss, len(pairs), zeta)


# -- calibration file ---------------------------------------------------------


def _pose_json(p: Pose) -> list:
    return [float(v) for v in (*p.translation, *p.rotation.q)]


def _pose_unjson(v) -> Pose:
    if len(v) != 7:
        raise ValueError("pose entries are [x, y, z, qw, qx, qy, qz]")
    return Pose(Rotation(np.array(v[3:], dtype=float)), v[:3])


def correction_to_dict(c: Sim2RealCorrection) -> dict:
    return {"U": _pose_json(c.U), "V": _pose_json(c.V), "zeta": c.zeta,
            "loss": c.loss, "pair_count": c.pair_count}


def correction_from_dict(d: dict) -> Sim2RealCorrection:
    return Sim2RealCorrection(_pose_unjson(d["U"]), _pose_unjson(d["V"]), float(d.get("loss", 0.0)),
                              int(d.get("pair_count", 0)), float(d.get("zeta", ZETA)))


def save_correction(path, c: Sim2RealCorrection) -> None:
    Path(path).write_text(json.dumps(correction_to_dict(c), indent=2) + "\n")


def load_correction(path) -> Sim2RealCorrection:
    return correction_from_dict(json.loads(Path(path).read_text()))
