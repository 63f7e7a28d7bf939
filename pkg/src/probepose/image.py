"""RGB rasters, bilinear sampling, homography warps and perturbation injectors.

Images are plain ``numpy`` arrays of shape ``(height, width, 3)`` and dtype
``uint8``. Pixel ``(u, v)`` refers to column ``u``, row ``v``; integer
coordinates are pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image, ImageDraw

from .errors import InvalidSpec, SingularHomography

# ITU-R BT.601 luma weights
LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)


def check_image(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise InvalidSpec(f"expected (H, W, 3) uint8 raster, got {img.shape} {img.dtype}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise InvalidSpec("image must be at least 1x1")
    return img


def blank(width: int, height: int, color=(0, 0, 0)) -> np.ndarray:
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:] = color
    return img


def to_luminance(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) @ LUMA


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear lookup of ``img`` at float coordinates.

    Returns ``(values, valid)``; ``values`` has shape ``x.shape + (C,)`` as
    float32 and is zero where ``valid`` is false (outside ``[0, W-1] x [0, H-1]``).
    """
    h, w = img.shape[:2]
    flat = img.reshape(h * w, -1)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    valid = (x >= 0) & (y >= 0) & (x <= w - 1) & (y <= h - 1)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    fx = (xs - x0).astype(np.float32)[..., None]
    fy = (ys - y0).astype(np.float32)[..., None]
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    r0 = y0 * w
    r1 = y1 * w
    v00 = flat[r0 + x0].astype(np.float32)
    v01 = flat[r0 + x1].astype(np.float32)
    v10 = flat[r1 + x0].astype(np.float32)
    v11 = flat[r1 + x1].astype(np.float32)
    top = v00 + (v01 - v00) * fx
    bot = v10 + (v11 - v10) * fx
    out = top + (bot - top) * fy
    out *= valid[..., None]
    return out, valid


def pixel_grid(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))


def apply_homography(h: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Map (N, 2) points through a 3x3 homography."""
    pts = np.asarray(pts, dtype=float)
    q = pts @ h[:, :2].T + h[:, 2]
    return q[:, :2] / q[:, 2:3]


def warp_homography(src: np.ndarray, h, out_w: int, out_h: int, return_mask: bool = False):
    """Warp ``src`` so that output pixel ``p`` takes ``src`` at ``h^-1 p``.

    Pixels whose source lies outside ``src`` are black.
    """
    h = np.asarray(getattr(h, "matrix", h), dtype=float)
    if abs(np.linalg.det(h)) <= 1e-12:
        raise SingularHomography(f"|det(H)| = {abs(np.linalg.det(h)):.3e}")
    hinv = np.linalg.inv(h)
    u, v = pixel_grid(out_w, out_h)
    den = hinv[2, 0] * u + hinv[2, 1] * v + hinv[2, 2]
    # homogeneous scale is sign-ambiguous; the image centre fixes which side is in front
    centre = hinv[2, 0] * 0.5 * (out_w - 1) + hinv[2, 1] * 0.5 * (out_h - 1) + hinv[2, 2]
    den = den * (1.0 if centre >= 0 else -1.0)
    hinv = hinv * (1.0 if centre >= 0 else -1.0)
    ok = den > 1e-12
    den = np.where(ok, den, 1.0)
    x = (hinv[0, 0] * u + hinv[0, 1] * v + hinv[0, 2]) / den
    y = (hinv[1, 0] * u + hinv[1, 1] * v + hinv[1, 2]) / den
    x = np.where(ok, x, -1.0)
    vals, valid = sample_bilinear(src, x, y)
    out = to_uint8(vals)
    if return_mask:
        return out, valid
    return out


# -- perturbations ---------------------------------------------------------


@dataclass(frozen=True)
class Occlusion:
    """Filled polygon; ``fill`` is an RGB triple or ``"noise"``."""

    polygon: Sequence[Sequence[float]]
    fill: Union[tuple, str] = (40, 40, 40)

    def __post_init__(self):
        pts = np.asarray(self.polygon, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
            raise InvalidSpec("occlusion polygon needs at least 3 (x, y) vertices")
        x, y = pts[:, 0], pts[:, 1]
        area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if area <= 0:
            raise InvalidSpec("occlusion polygon has zero area")


@dataclass(frozen=True)
class Specular:
    """Additive bright blob with a smooth radial falloff."""

    center: tuple[float, float]
    radius: float
    gain: float = 200.0


@dataclass(frozen=True)
class Gamma:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise InvalidSpec(f"gamma must be positive, got {self.gamma}")


@dataclass(frozen=True)
class GaussianNoise:
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidSpec("noise sigma must be non-negative")


@dataclass(frozen=True)
class Jitter:
    """Random sub-pixel image-plane translation with per-axis std ``sigma`` px."""

    sigma: float


Perturbation = Union[Occlusion, Specular, Gamma, GaussianNoise, Jitter]


def polygon_mask(width: int, height: int, polygon) -> np.ndarray:
    canvas = Image.new("L", (width, height), 0)
    ImageDraw.Draw(canvas).polygon([(float(x), float(y)) for x, y in polygon], fill=1)
    return np.asarray(canvas, dtype=bool)


def inject_perturbation(img: np.ndarray, kind: Perturbation, seed=None) -> np.ndarray:
    img = check_image(img)
    rng = np.random.default_rng(seed)
    h, w = img.shape[:2]
    if isinstance(kind, Occlusion):
        mask = polygon_mask(w, h, kind.polygon)
        out = img.copy()
        if isinstance(kind.fill, str):
            if kind.fill != "noise":
                raise InvalidSpec(f"unknown fill {kind.fill!r}")
            out[mask] = rng.integers(0, 256, size=(int(mask.sum()), 3), dtype=np.uint8)
        else:
            out[mask] = np.asarray(kind.fill, dtype=np.uint8)
        return out
    if isinstance(kind, Specular):
        if kind.radius <= 0:
            raise InvalidSpec("specular radius must be positive")
        u, v = pixel_grid(w, h)
        r2 = ((u - kind.center[0]) ** 2 + (v - kind.center[1]) ** 2) / kind.radius**2
        blob = kind.gain * np.clip(1.0 - r2, 0.0, 1.0) ** 2
        return to_uint8(img.astype(np.float32) + blob[..., None])
    if isinstance(kind, Gamma):
        if kind.gamma == 1.0:
            return img.copy()
        lut = to_uint8(255.0 * (np.arange(256) / 255.0) ** kind.gamma)
        return lut[img]
    if isinstance(kind, GaussianNoise):
        if kind.sigma == 0:
            return img.copy()
        noise = rng.normal(0.0, kind.sigma, size=img.shape)
        return to_uint8(img.astype(np.float64) + noise)
    if isinstance(kind, Jitter):
        dx, dy = rng.normal(0.0, kind.sigma, size=2)
        shift = np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
        return warp_homography(img, shift, w, h)
    raise InvalidSpec(f"unsupported perturbation {kind!r}")


def band_occlusion(width: int, height: int, area_fraction: float, rng, fill=(40, 40, 40)) -> Occlusion:
    """A straight band (arm-like silhouette) covering ``area_fraction`` of the frame."""
    if not 0 < area_fraction <= 1:
        raise InvalidSpec("area fraction must be in (0, 1]")
    if area_fraction >= 1.0:
        return Occlusion([(-1, -1), (width + 1, -1), (width + 1, height + 1), (-1, height + 1)], fill)
    cx, cy = rng.uniform(0.25, 0.75) * width, rng.uniform(0.25, 0.75) * height
    ang = rng.uniform(0, np.pi)
    d = np.array([np.cos(ang), np.sin(ang)])
    nrm = np.array([-d[1], d[0]])
    big = 2.0 * (width + height)

    def poly(half):
        c = np.array([cx, cy])
        return [tuple(c + s * big * d + o * half * nrm) for s, o in ((-1, -1), (1, -1), (1, 1), (-1, 1))]

    lo, hi = 0.0, float(width + height)
    target = area_fraction * width * height
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if polygon_mask(width, height, poly(mid)).sum() < target:
            lo = mid
        else:
            hi = mid
    return Occlusion(poly(hi), fill)


# -- I/O and the reference texture ------------------------------------------


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(check_image(img), mode="RGB").save(path, optimize=False)


def generate_pattern(size: int = 2000, cell: float = 14.0, seed: int = 7) -> np.ndarray:
    """Seeded random-colour Voronoi cell texture of ``size x size`` pixels.

    Seeds are jittered-grid points with mean spacing ``cell`` pixels; each
    cell gets a uniformly random RGB colour.
    """
    from scipy.spatial import cKDTree

    rng = np.random.default_rng(seed)
    n = int(np.ceil(size / cell)) + 2
    gx, gy = np.meshgrid(np.arange(n) - 1.0, np.arange(n) - 1.0)
    seeds = np.column_stack([gx.ravel(), gy.ravel()]) + rng.uniform(0.0, 1.0, size=(n * n, 2))
    seeds *= cell
    colors = rng.integers(0, 256, size=(len(seeds), 3), dtype=np.uint8)
    tree = cKDTree(seeds)
    u, v = pixel_grid(size, size)
    _, idx = tree.query(np.column_stack([u.ravel() + 0.5, v.ravel() + 0.5]))
    return colors[idx].reshape(size, size, 3)


_PATTERN_FILE = Path(__file__).with_name("data") / "workspace_pattern.png"
_pattern_cache: dict = {}


def reference_pattern() -> np.ndarray:
    """The shipped 2000x2000 workspace texture (read-only array)."""
    if "ref" not in _pattern_cache:
        if _PATTERN_FILE.exists():
            img = read_png(_PATTERN_FILE)
        else:
            img = generate_pattern()
        img.setflags(write=False)
        _pattern_cache["ref"] = img
    return _pattern_cache["ref"]
