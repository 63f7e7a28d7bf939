"""Confidence-weighted fusion of the left and right probe estimates."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import NoEstimate
from .geometry import Pose, slerp
from .servo import ServoResult


@dataclass(frozen=True, eq=False)
class FusedPose:
    pose: Pose
    cameras: tuple[str, ...]
    weights: tuple[float, float]  # (w_l, w_r); zero for an absent camera


def _usable(r: ServoResult | None) -> bool:
    return r is not None and r.converged and r.weight > 0


def fuse_poses(left: Pose | None, right: Pose | None, w_l: float = 0.0, w_r: float = 0.0) -> FusedPose:
    """Fuse probe poses directly; a pose given as ``None`` is absent."""
    if left is None and right is None:
        raise NoEstimate("neither camera produced an estimate")
    if right is None:
        return FusedPose(left, ("left",), (float(w_l), 0.0))
    if left is None:
        return FusedPose(right, ("right",), (0.0, float(w_r)))
    if not (w_l > 0 and w_r > 0):
        raise ValueError("both weights must be positive when fusing two estimates")
    total = w_l + w_r
    t = (w_l * left.translation + w_r * right.translation) / total
    q = slerp(left.rotation, right.rotation, w_r / total)
    return FusedPose(Pose(q, t), ("left", "right"), (float(w_l), float(w_r)))


def fuse(left: ServoResult | None, right: ServoResult | None) -> FusedPose:
    """Weighted translation average plus Slerp with parameter ``w_r / (w_l + w_r)``.

    Sessions that did not converge count as absent.
    """
    l_ok, r_ok = _usable(left), _usable(right)
    return fuse_poses(left.pose if l_ok else None, right.pose if r_ok else None,
                      left.weight if l_ok else 0.0, right.weight if r_ok else 0.0)

