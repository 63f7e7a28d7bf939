"""Slice compounding into a voxel volume and volume-comparison metrics.

Volumes live on a global lattice: voxel ``i`` along an axis has its centre at
``i * pitch`` (meters), and a volume stores the integer index of its first
voxel. Two volumes with the same pitch therefore always share voxel centres,
which makes the overlap metrics exact set arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInput, EmptyVolume, InvalidSpec, PitchMismatch
from .geometry import Pose, Rotation
from .image import read_png

DEFAULT_PIXEL_PITCH = 1e-4  # m/px
DEFAULT_PLANE_WIDTH = 0.04  # m
DEFAULT_VOXEL_PITCH = 5e-4


def default_placement(width_px: int, pixel_pitch: float = DEFAULT_PIXEL_PITCH) -> Pose:
    """Image plane at the probe tip: columns along probe ``x``, rows along probe ``z`` (depth)."""
    R = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    return Pose.from_rt(R, [-(width_px - 1) / 2 * pixel_pitch, 0.0, 0.0])


@dataclass(eq=False)
class SliceSet:
    masks: list
    poses: list
    pixel_pitch: float = DEFAULT_PIXEL_PITCH
    placement: Pose | None = None  # image plane in the probe frame

    def __post_init__(self):
        if len(self.masks) != len(self.poses):
            raise InvalidSpec("need one pose per mask")
        if not self.pixel_pitch > 0:
            raise InvalidSpec("pixel pitch must be positive")
        self.masks = [np.asarray(m) > 0 for m in self.masks]
        shapes = {m.shape for m in self.masks}
        if len(shapes) > 1 or any(len(s) != 2 for s in shapes):
            raise InvalidSpec("masks must be 2-D and share one shape")
        if self.placement is None and self.masks:
            self.placement = default_placement(self.masks[0].shape[1], self.pixel_pitch)

    def __len__(self) -> int:
        return len(self.masks)

    def world_points(self, i: int) -> np.ndarray:
        v, u = np.nonzero(self.masks[i])
        local = np.column_stack([u * self.pixel_pitch, v * self.pixel_pitch, np.zeros(len(u))])
        return (self.poses[i] @ self.placement).apply(local)


@dataclass(eq=False)
class VoxelVolume:
    start: np.ndarray  # integer lattice index of grid[0, 0, 0]
    pitch: float
    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.pitch > 0:
            raise InvalidSpec("voxel pitch must be positive")
        self.start = np.asarray(self.start, dtype=np.int64).reshape(3)
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 3:
            raise InvalidSpec("occupancy grid must be 3-D")

    @property
    def origin(self) -> np.ndarray:
        """Centre of voxel ``[0, 0, 0]`` in meters."""
        return self.start * self.pitch

    @property
    def count(self) -> int:
        return int(self.grid.sum())

    @property
    def volume(self) -> float:
        return self.count * self.pitch**3

    def indices(self) -> np.ndarray:
        """Global lattice indices of occupied voxels, shape (N, 3)."""
        return np.argwhere(self.grid) + self.start

    def centers(self) -> np.ndarray:
        return self.indices() * self.pitch

    @classmethod
    def from_indices(cls, idx: np.ndarray, pitch: float) -> "VoxelVolume":
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            raise EmptyInput("no occupied voxels")
        lo = idx.min(axis=0)
        dims = idx.max(axis=0) - lo + 1
        grid = np.zeros(tuple(dims), dtype=bool)
        rel = idx - lo
        grid[rel[:, 0], rel[:, 1], rel[:, 2]] = True
        return cls(lo, pitch, grid)

    @classmethod
    def from_points(cls, pts: np.ndarray, pitch: float) -> "VoxelVolume":
        """Nearest-voxel splat of world points."""
        return cls.from_indices(np.rint(np.asarray(pts) / pitch).astype(np.int64), pitch)


def compound(slices: SliceSet, voxel_pitch: float = DEFAULT_VOXEL_PITCH) -> VoxelVolume:
    """OR-compound every on-pixel of every slice into its nearest voxel."""
    if len(slices) == 0:
        raise EmptyInput("slice set is empty")
    if not voxel_pitch > 0:
        raise InvalidSpec("voxel pitch must be positive")
    idx = [np.rint(slices.world_points(i) / voxel_pitch).astype(np.int64) for i in range(len(slices))]
    idx = np.concatenate(idx) if idx else np.empty((0, 3), np.int64)
    if len(idx) == 0:
        raise EmptyInput("no on-pixels in any slice")
    return VoxelVolume.from_indices(np.unique(idx, axis=0), voxel_pitch)


def _keys(idx: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(idx, dtype=np.int64).view([("", np.int64)] * 3).ravel()


def volume_metrics(a: VoxelVolume, b: VoxelVolume) -> dict:
    """Hausdorff and Chamfer distances (mm) plus Dice and Jaccard overlaps."""
    if not np.isclose(a.pitch, b.pitch, rtol=1e-12, atol=0.0):
        raise PitchMismatch(f"voxel pitches differ: {a.pitch} vs {b.pitch}")
    if a.count == 0 or b.count == 0:
        raise EmptyVolume("volume has no occupied voxels")
    ia, ib = a.indices(), b.indices()
    pa, pb = ia * a.pitch, ib * a.pitch
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    hausdorff = max(d_ab.max(), d_ba.max())
    chamfer = d_ab.mean() + d_ba.mean()
    inter = len(np.intersect1d(_keys(ia), _keys(ib)))
    union = len(ia) + len(ib) - inter
    return {
        "hausdorff": float(hausdorff * 1e3),
        "chamfer": float(chamfer * 1e3),
        "dice": 2.0 * inter / (len(ia) + len(ib)),
        "jaccard": inter / union,
    }


# -- phantoms -----------------------------------------------------------------


def cylinder_phantom(radius: float = 0.006, length: float = 0.03, depth: float = 0.015,
                     pitch: float = DEFAULT_VOXEL_PITCH, width: float = DEFAULT_PLANE_WIDTH,
                     rows: int | None = None):
    """Slices of a cylinder with its axis along world ``y``, ``depth`` below the probe tip.

    The probe looks straight down from the origin height and sweeps along
    ``y``. Pixel pitch and sweep step both equal ``pitch`` and sample points
    sit on the voxel lattice, so splatting at that pitch maps each sample to
    one voxel. Returns ``(SliceSet, analytic volume in m^3)``.
    """
    cols = int(round(width / pitch)) | 1  # odd, so the centre column is on the lattice
    rows = rows or int(np.ceil((depth + radius) / pitch)) + 2
    u = (np.arange(cols) - (cols - 1) / 2) * pitch
    v = np.arange(rows) * pitch
    U, Vv = np.meshgrid(u, v)
    mask = (U**2 + (Vv - depth) ** 2) <= radius**2
    n = int(round(length / pitch))
    down = Rotation.from_matrix(np.diag([1.0, -1.0, -1.0]))  # probe z toward -z_world
    poses = [Pose(down, [0.0, (i - (n - 1) / 2) * pitch if n % 2 else (i - n // 2) * pitch, 0.0])
             for i in range(n)]
    return SliceSet([mask] * n, poses, pitch), np.pi * radius**2 * length


# -- I/O ------------------------------------------------------------------------


def save_volume(path, vol: VoxelVolume) -> None:
    """Write ``<path>`` (JSON header) and ``<path>.bits`` (np.packbits, C order)."""
    path = Path(path)
    bits = path.with_name(path.name + ".bits")
    header = {
        "format": "probepose-volume-1",
        "origin_m": [float(x) for x in vol.origin],
        "start_index": [int(x) for x in vol.start],
        "pitch_m": float(vol.pitch),
        "dims": [int(x) for x in vol.grid.shape],
        "order": "C",
        "data": bits.name,
    }
    path.write_text(json.dumps(header, indent=2) + "\n")
    bits.write_bytes(np.packbits(vol.grid.ravel(order="C")).tobytes())


def load_volume(path) -> VoxelVolume:
    path = Path(path)
    h = json.loads(path.read_text())
    dims = tuple(h["dims"])
    raw = np.frombuffer((path.parent / h["data"]).read_bytes(), dtype=np.uint8)
    grid = np.unpackbits(raw, count=int(np.prod(dims))).astype(bool).reshape(dims)
    return VoxelVolume(h["start_index"], float(h["pitch_m"]), grid)


def load_slices(mask_paths, poses, pixel_pitch: float = DEFAULT_PIXEL_PITCH) -> SliceSet:
    masks = [read_png(p)[..., 0] > 127 for p in mask_paths]
    return SliceSet(masks, list(poses), pixel_pitch)
