"""Rigid-body math: unit quaternions, SE(3) poses, twists and the exp/log maps.

Conventions used throughout the package:

- quaternions are stored ``(w, x, y, z)``, Hamilton product;
- a ``Pose`` is the placement of a child frame in a parent frame, so
  ``pose.apply(p_child) = R @ p_child + t`` gives parent coordinates;
- ``a @ b`` composes poses (``T_ab @ T_bc = T_ac``);
- internal units are meters and radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

_EPS = 1e-12


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < _EPS:
        raise ValueError("quaternion has zero or non-finite norm")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> np.ndarray:
    """Quaternion from a rotation matrix (Shepperd's largest-diagonal branch)."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    diag = (tr, R[0, 0], R[1, 1], R[2, 2])
    k = int(np.argmax(diag))
    if k == 0:
        s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif k == 1:
        s = 2.0 * math.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif k == 2:
        s = 2.0 * math.sqrt(max(1.0 + R[1, 1] - R[0, 0] - R[2, 2], 0.0))
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(max(1.0 + R[2, 2] - R[0, 0] - R[1, 1], 0.0))
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = _normalize(np.array(q))
    return q if q[0] >= 0 else -q


def so3_exp(phi) -> np.ndarray:
    """Rodrigues formula."""
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix, angle in [0, pi]."""
    return Rotation.from_matrix(R).as_axis_angle()


def _left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = skew(phi)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    a = (1.0 - math.cos(theta)) / theta**2
    b = (theta - math.sin(theta)) / theta**3
    return np.eye(3) + a * K + b * K @ K


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion rotation, ``q = (w, x, y, z)``."""

    q: np.ndarray

    def __post_init__(self):
        q = _normalize(np.asarray(self.q, dtype=float).reshape(4))
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "_R", quat_to_matrix(q))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, R) -> "Rotation":
        return cls(matrix_to_quat(R))

    @classmethod
    def from_axis_angle(cls, rotvec) -> "Rotation":
        rotvec = np.asarray(rotvec, dtype=float)
        theta = float(np.linalg.norm(rotvec))
        if theta < 1e-12:
            # second-order accurate for tiny angles
            return cls(np.concatenate([[1.0 - theta**2 / 8.0], 0.5 * rotvec]))
        axis = rotvec / theta
        return cls(np.concatenate([[math.cos(theta / 2)], math.sin(theta / 2) * axis]))

    @classmethod
    def from_rpy(cls, roll: float, pitch: float, yaw: float) -> "Rotation":
        """Intrinsic x-y'-z'' sequence: ``R = Rx(roll) Ry(pitch) Rz(yaw)``. Radians."""
        rx = cls.from_axis_angle([roll, 0.0, 0.0])
        ry = cls.from_axis_angle([0.0, pitch, 0.0])
        rz = cls.from_axis_angle([0.0, 0.0, yaw])
        return rx * ry * rz

    @property
    def matrix(self) -> np.ndarray:
        return self._R.copy()

    def as_axis_angle(self) -> np.ndarray:
        q = self.q if self.q[0] >= 0 else -self.q
        s = float(np.linalg.norm(q[1:]))
        if s < 1e-12:
            return 2.0 * q[1:]
        angle = 2.0 * math.atan2(s, q[0])
        return angle * q[1:] / s

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.as_axis_angle()))

    def inverse(self) -> "Rotation":
        w, x, y, z = self.q
        return Rotation(np.array([w, -x, -y, -z]))

    def apply(self, v) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self._R.T

    def __mul__(self, other: "Rotation") -> "Rotation":
        return Rotation(quat_multiply(self.q, other.q))

    def __repr__(self) -> str:
        return f"Rotation(q={np.array2string(self.q, precision=6)})"


def axis_angle(r: Rotation) -> np.ndarray:
    return r.as_axis_angle()


def from_axis_angle(rotvec) -> Rotation:
    return Rotation.from_axis_angle(rotvec)


def rotation_angle_between(a: Rotation, b: Rotation) -> float:
    """Geodesic distance on SO(3), radians."""
    # atan2 form stays accurate for tiny angles, where acos(|<a, b>|) loses all digits
    r = quat_multiply(a.inverse().q, b.q)
    return 2.0 * math.atan2(float(np.linalg.norm(r[1:])), abs(float(r[0])))


def slerp(q1: Rotation, q2: Rotation, s: float) -> Rotation:
    """Spherical linear interpolation along the shorter arc."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter {s} outside [0, 1]")
    a, b = q1.q, q2.q
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b, dot = -b, -dot
    dot = min(dot, 1.0)
    omega = math.acos(dot)
    if omega < 1e-10:
        return Rotation((1.0 - s) * a + s * b)
    so = math.sin(omega)
    return Rotation((math.sin((1.0 - s) * omega) / so) * a + (math.sin(s * omega) / so) * b)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform placing a child frame inside a parent frame."""

    rotation: Rotation = field(default_factory=Rotation.identity)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(Rotation.from_matrix(T[:3, :3]), T[:3, 3])

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        return cls(Rotation.from_matrix(R), t)

    @property
    def R(self) -> np.ndarray:
        return self.rotation._R

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.translation
        return T

    def inverse(self) -> "Pose":
        rinv = self.rotation.inverse()
        return Pose(rinv, -(rinv._R @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Map points (..., 3) from the child frame to the parent frame."""
        return np.asarray(points, dtype=float) @ self.R.T + self.translation

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation * other.rotation, self.R @ other.translation + self.translation)

    def __repr__(self) -> str:
        return (
            f"Pose(t={np.array2string(self.translation, precision=6)}, "
            f"q={np.array2string(self.rotation.q, precision=6)})"
        )


@dataclass(frozen=True)
class Twist:
    """Body-frame velocity: ``linear`` in m/s, ``angular`` in rad/s."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(3)
        ang = np.asarray(self.angular, dtype=float).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("twist components must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def se3_exp(xi) -> Pose:
    """Exponential map of a 6-vector ``(rho, phi)``."""
    xi = np.asarray(xi, dtype=float)
    rho, phi = xi[:3], xi[3:]
    return Pose(Rotation.from_axis_angle(phi), _left_jacobian(phi) @ rho)


def se3_log(p: Pose) -> np.ndarray:
    phi = p.rotation.as_axis_angle()
    rho = np.linalg.solve(_left_jacobian(phi), p.translation)
    return np.concatenate([rho, phi])


def integrate_twist(p: Pose, v: Twist, dt: float) -> Pose:
    """Advance ``p`` by the body-frame increment ``exp(v * dt)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return p @ se3_exp(v.as_vector() * dt)


def pose_errors(est: Pose, gt: Pose) -> tuple[float, float]:
    """Euclidean translation distance (m) and geodesic rotation angle (rad)."""
    dt = float(np.linalg.norm(est.translation - gt.translation))
    return dt, rotation_angle_between(est.rotation, gt.rotation)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """Camera pose (z forward, y down in the image) at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=float), z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross([1.0, 0.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_rt(np.column_stack([x, y, z]), eye)


# pose records: stamp,x,y,z,qw,qx,qy,qz

def pose_to_record(stamp: float, p: Pose) -> str:
    vals = [stamp, *p.translation, *p.rotation.q]
    return ",".join(repr(float(v)) for v in vals)


def pose_from_record(line: str) -> tuple[float, Pose]:
    fields = [float(x) for x in line.strip().split(",")]
    if len(fields) != 8:
        raise ValueError(f"pose record needs 8 fields, got {len(fields)}: {line!r}")
    return fields[0], Pose(Rotation(np.array(fields[4:8])), fields[1:4])


def write_pose_csv(path, records: Iterable[tuple[float, Pose]], header: bool = True) -> None:
    lines = ["# stamp,x,y,z,qw,qx,qy,qz"] if header else []
    lines += [pose_to_record(s, p) for s, p in records]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_csv(path) -> list[tuple[float, Pose]]:
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        out.append(pose_from_record(line))
    return out


def mean_pose(poses: Sequence[Pose]) -> Pose:
    """Chordal mean; used only for summaries."""
    t = np.mean([p.translation for p in poses], axis=0)
    M = sum(p.R for p in poses)
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return Pose.from_rt(U @ D @ Vt, t)
