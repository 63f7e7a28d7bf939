"""Feature registration between two views of the textured plane.

Pipeline: luminance -> 4-level scale pyramid -> determinant-of-Hessian
keypoints with sub-pixel refinement -> intensity-centroid orientation ->
256-bit oriented binary descriptor; brute-force Hamming matching with
mutual cross-check and ratio test; RANSAC over 4-point normalised-DLT
hypotheses with a final all-inlier refit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import EstimationFailed, InvalidSpec, NoMatches, TooFewFeatures
from .image import apply_homography, to_luminance

N_BITS = 256
_WORDS = N_BITS // 64


@dataclass(frozen=True)
class DetectorConfig:
    max_features: int = 1500
    n_levels: int = 4
    scale_factor: float = 1.4
    hessian_sigma: float = 2.0
    threshold: float = 2e-4
    patch_radius: int = 15
    orientation_radius: int = 10
    min_features: int = 8


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    orientation: float
    response: float


@dataclass(eq=False)
class Features:
    """Keypoints and descriptors as parallel arrays, sorted by response."""

    xy: np.ndarray  # (N, 2) full-resolution pixel coordinates
    scale: np.ndarray  # (N,) Hessian sigma in full-resolution pixels
    orientation: np.ndarray  # (N,) radians
    response: np.ndarray  # (N,)
    level: np.ndarray  # (N,) pyramid level
    descriptors: np.ndarray  # (N, 4) uint64, 256 bits
    image_size: tuple[int, int] = (0, 0)  # (width, height)

    def __len__(self) -> int:
        return len(self.xy)

    def __getitem__(self, i: int) -> tuple[Keypoint, np.ndarray]:
        kp = Keypoint(float(self.xy[i, 0]), float(self.xy[i, 1]), float(self.scale[i]),
                      float(self.orientation[i]), float(self.response[i]))
        return kp, self.descriptors[i]

    @property
    def signed(self) -> np.ndarray:
        if getattr(self, "_signed", None) is None or len(self._signed) != len(self.descriptors):
            self._signed = signed_bits(self.descriptors)
        return self._signed

    def subset(self, idx) -> "Features":
        return Features(self.xy[idx], self.scale[idx], self.orientation[idx], self.response[idx],
                        self.level[idx], self.descriptors[idx], self.image_size)


def _sampling_pattern(radius: int, seed: int = 0x5EED) -> np.ndarray:
    """Fixed set of 256 point pairs, isotropic Gaussian, clipped to the patch disk."""
    rng = np.random.default_rng(seed)
    sigma = (2 * radius + 1) / 5.0
    pts = []
    while len(pts) < N_BITS:
        p = rng.normal(0.0, sigma, size=4)
        if np.all(np.hypot(p[0::2], p[1::2]) <= radius) and np.hypot(p[0] - p[2], p[1] - p[3]) > 1.0:
            pts.append(p)
    return np.array(pts)  # (256, 4): x1, y1, x2, y2


def _disk_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dx, dy = np.meshgrid(r, r)
    keep = dx**2 + dy**2 <= radius**2
    return np.column_stack([dx[keep], dy[keep]])


_PAIRS: dict[int, np.ndarray] = {}
_DISKS: dict[int, np.ndarray] = {}


def _pairs(radius: int) -> np.ndarray:
    if radius not in _PAIRS:
        _PAIRS[radius] = _sampling_pattern(radius)
    return _PAIRS[radius]


def _disk(radius: int) -> np.ndarray:
    if radius not in _DISKS:
        _DISKS[radius] = _disk_offsets(radius)
    return _DISKS[radius]


def build_pyramid(lum: np.ndarray, n_levels: int, factor: float) -> list[np.ndarray]:
    """Level ``l`` pixel ``x`` corresponds to full-resolution ``x * factor**l``."""
    levels = [lum]
    h, w = lum.shape
    for lvl in range(1, n_levels):
        s = factor**lvl
        out_shape = (int(np.floor((h - 1) / s)) + 1, int(np.floor((w - 1) / s)) + 1)
        if min(out_shape) < 16:
            break
        pre = ndimage.gaussian_filter(lum, 0.5 * np.sqrt(s * s - 1.0), mode="nearest")
        levels.append(ndimage.affine_transform(pre, np.diag([s, s]), output_shape=out_shape, order=1, mode="nearest"))
    return levels


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x = np.clip(x, 0.0, w - 1.001)
    y = np.clip(y, 0.0, h - 1.001)
    x0 = x.astype(np.intp)
    y0 = y.astype(np.intp)
    fx = (x - x0).astype(np.float32)
    fy = (y - y0).astype(np.float32)
    flat = img.ravel()
    i = y0 * w + x0
    top = flat[i] * (1 - fx) + flat[i + 1] * fx
    bot = flat[i + w] * (1 - fx) + flat[i + w + 1] * fx
    return top * (1 - fy) + bot * fy


def _detect_level(img: np.ndarray, cfg: DetectorConfig):
    L = ndimage.gaussian_filter(img, cfg.hessian_sigma, mode="nearest")
    Lxx = np.zeros_like(L)
    Lyy = np.zeros_like(L)
    Lxy = np.zeros_like(L)
    Lxx[:, 1:-1] = L[:, 2:] - 2 * L[:, 1:-1] + L[:, :-2]
    Lyy[1:-1, :] = L[2:, :] - 2 * L[1:-1, :] + L[:-2, :]
    Lxy[1:-1, 1:-1] = 0.25 * (L[2:, 2:] - L[2:, :-2] - L[:-2, 2:] + L[:-2, :-2])
    resp = np.abs(Lxx * Lyy - Lxy * Lxy) * cfg.hessian_sigma**4
    border = cfg.patch_radius + 2
    h, w = resp.shape
    if h <= 2 * border or w <= 2 * border:
        return np.empty((0, 2)), np.empty(0), L
    peak = (resp == ndimage.maximum_filter(resp, size=3)) & (resp > cfg.threshold)
    peak[:border] = False
    peak[-border:] = False
    peak[:, :border] = False
    peak[:, -border:] = False
    ys, xs = np.nonzero(peak)
    r0 = resp[ys, xs]
    # separable parabola fit for sub-pixel position
    rxm, rxp = resp[ys, xs - 1], resp[ys, xs + 1]
    rym, ryp = resp[ys - 1, xs], resp[ys + 1, xs]
    dxx = rxm - 2 * r0 + rxp
    dyy = rym - 2 * r0 + ryp
    ox = np.where(dxx < 0, 0.5 * (rxm - rxp) / np.where(dxx < 0, dxx, -1.0), 0.0)
    oy = np.where(dyy < 0, 0.5 * (rym - ryp) / np.where(dyy < 0, dyy, -1.0), 0.0)
    pts = np.column_stack([xs + np.clip(ox, -0.5, 0.5), ys + np.clip(oy, -0.5, 0.5)])
    return pts, r0, L


def _orientation(L: np.ndarray, pts: np.ndarray, radius: int) -> np.ndarray:
    off = _disk(radius)
    xi = np.rint(pts[:, 0]).astype(np.intp)
    yi = np.rint(pts[:, 1]).astype(np.intp)
    vals = L[yi[:, None] + off[None, :, 1], xi[:, None] + off[None, :, 0]]
    m10 = vals @ off[:, 0]
    m01 = vals @ off[:, 1]
    return np.arctan2(m01, m10)


def _describe(L: np.ndarray, pts: np.ndarray, angle: np.ndarray, radius: int) -> np.ndarray:
    pairs = _pairs(radius)
    c = np.cos(angle)[:, None]
    s = np.sin(angle)[:, None]
    x1, y1, x2, y2 = (pairs[:, i][None, :] for i in range(4))
    px, py = pts[:, 0:1], pts[:, 1:2]
    a = _bilinear(L, px + c * x1 - s * y1, py + s * x1 + c * y1)
    b = _bilinear(L, px + c * x2 - s * y2, py + s * x2 + c * y2)
    bits = np.packbits(a < b, axis=1, bitorder="little")  # (N, 32) uint8
    return np.ascontiguousarray(bits).view(np.uint64)


def detect_and_describe(img: np.ndarray, cfg: DetectorConfig | None = None, max_features: int | None = None) -> Features:
    """Detect oriented multi-scale keypoints and compute binary descriptors."""
    cfg = cfg or DetectorConfig()
    cap = cfg.max_features if max_features is None else max_features
    if img.ndim != 3 or img.shape[0] < 64 or img.shape[1] < 64:
        raise InvalidSpec("registration needs an RGB image of at least 64x64")
    lum = to_luminance(img) / np.float32(255.0)
    pyramid = build_pyramid(lum, cfg.n_levels, cfg.scale_factor)
    found = []
    for lvl, level_img in enumerate(pyramid):
        pts, resp, L = _detect_level(level_img, cfg)
        found.append((pts, resp, L))
    resp_all = np.concatenate([f[1] for f in found])
    if len(resp_all) == 0:
        raise TooFewFeatures("no keypoints detected")
    lvl_all = np.concatenate([np.full(len(f[1]), i) for i, f in enumerate(found)])
    pts_all = np.concatenate([f[0] * cfg.scale_factor**i for i, f in enumerate(found)])
    # deterministic global cut by response (ties broken by position)
    order = np.lexsort((pts_all[:, 1], pts_all[:, 0], -resp_all))[:cap]
    chunks = []
    for lvl, (pts, resp, L) in enumerate(found):
        sel = order[lvl_all[order] == lvl]
        if len(sel) == 0:
            continue
        offset = int(np.sum(lvl_all < lvl))
        local = pts[sel - offset]
        ang = _orientation(L, local, cfg.orientation_radius)
        desc = _describe(L, local, ang, cfg.patch_radius)
        chunks.append((sel, ang, desc))
    sel = np.concatenate([c[0] for c in chunks])
    ang = np.concatenate([c[1] for c in chunks])
    desc = np.concatenate([c[2] for c in chunks])
    # order entries by their position in ``order``
    pos = np.empty(len(resp_all), dtype=np.intp)
    pos[order] = np.arange(len(order))
    k = np.argsort(pos[sel])
    sel, ang, desc = sel[k], ang[k], desc[k]
    feats = Features(pts_all[sel], cfg.hessian_sigma * cfg.scale_factor ** lvl_all[sel], ang, resp_all[sel],
                     lvl_all[sel].astype(np.int16), desc, (img.shape[1], img.shape[0]))
    if len(feats) < cfg.min_features:
        raise TooFewFeatures(f"only {len(feats)} keypoints detected")
    return feats


# -- matching -----------------------------------------------------------------


@dataclass(eq=False)
class MatchSet:
    src_idx: np.ndarray
    dst_idx: np.ndarray
    distance: np.ndarray
    src_pts: np.ndarray
    dst_pts: np.ndarray
    src: str = "src"
    dst: str = "dst"

    def __len__(self) -> int:
        return len(self.src_idx)


def signed_bits(desc: np.ndarray) -> np.ndarray:
    """Descriptors as (N, 256) float32 vectors of +-1."""
    bits = np.unpackbits(desc.view(np.uint8), axis=1, bitorder="little")
    return bits.astype(np.float32) * 2.0 - 1.0


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs Hamming distances between (N, 4) and (M, 4) uint64 descriptors.

    Uses ``popcount(x ^ y) = (256 - sa . sb) / 2`` with +-1 vectors, which
    is exact in float32 and runs as one matrix product.
    """
    return _hamming_signed(signed_bits(a), signed_bits(b))


def _hamming_signed(sa: np.ndarray, sb: np.ndarray) -> np.ndarray:
    return (np.float32(N_BITS) - sa @ sb.T) * np.float32(0.5)


def hamming_popcount(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference popcount implementation of :func:`hamming_matrix`."""
    acc = np.zeros((len(a), len(b)), dtype=np.int32)
    for w in range(_WORDS):
        acc += np.bitwise_count(a[:, None, w] ^ b[None, :, w])
    return acc


def _best_two_rows(D: np.ndarray):
    idx = np.argmin(D, axis=1)
    best = D[np.arange(len(D)), idx]
    if D.shape[1] > 1:
        second = np.partition(D, 1, axis=1)[:, 1]
    else:
        second = np.full_like(best, 10 * N_BITS)
    return idx, best, second


def match(a: Features, b: Features, ratio: float = 0.8, src: str = "src", dst: str = "dst",
          max_distance: int = N_BITS) -> MatchSet:
    """Mutual nearest neighbours under Hamming distance that pass the ratio test both ways."""
    if len(a) == 0 or len(b) == 0:
        raise NoMatches("empty feature list")
    sa, sb = a.signed, b.signed
    D = _hamming_signed(sa, sb)
    ab, ab_best, ab_second = _best_two_rows(D)
    # reverse direction only for the columns that are someone's nearest neighbour
    cols = np.unique(ab)
    DT = np.ascontiguousarray(D[:, cols].T)
    ba_c, ba_best_c, ba_second_c = _best_two_rows(DT)
    lookup = np.searchsorted(cols, ab)
    i = np.arange(len(a))
    mutual = ba_c[lookup] == i
    ok = (mutual & (ab_best < ratio * ab_second) & (ba_best_c[lookup] < ratio * ba_second_c[lookup])
          & (ab_best <= max_distance))
    ia = i[ok]
    ib = ab[ok]
    if len(ia) == 0:
        raise NoMatches("no match survived cross-check and ratio test")
    return MatchSet(ia, ib, np.rint(ab_best[ok]).astype(np.int32), a.xy[ia], b.xy[ib], src, dst)


# -- homography estimation ----------------------------------------------------


@dataclass(eq=False)
class Homography:
    matrix: np.ndarray
    src: str = "src"
    dst: str = "dst"
    inlier_count: int = 0
    inlier_ratio: float = 0.0
    inliers: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if abs(np.linalg.det(m)) <= 1e-12:
            raise EstimationFailed("homography is singular")
        if self.src == self.dst:
            raise InvalidSpec("homography frame tags must differ")
        self.matrix = m / m[2, 2]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix), self.dst, self.src, self.inlier_count, self.inlier_ratio)

    def apply(self, pts) -> np.ndarray:
        return apply_homography(self.matrix, pts)


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 3.0
    confidence: float = 0.995
    max_iter: int = 2000
    min_inliers: int = 12
    seed: int = 0


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def dlt_homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Normalised DLT; returns ``None`` for degenerate input."""
    Ts, Td = _normalizer(src), _normalizer(dst)
    s = src @ Ts[:2, :2].T + Ts[:2, 2]
    d = dst @ Td[:2, :2].T + Td[:2, 2]
    n = len(s)
    A = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    A[0::2, 0], A[0::2, 1], A[0::2, 2] = x, y, 1.0
    A[0::2, 6], A[0::2, 7], A[0::2, 8] = -u * x, -u * y, -u
    A[1::2, 3], A[1::2, 4], A[1::2, 5] = x, y, 1.0
    A[1::2, 6], A[1::2, 7], A[1::2, 8] = -v * x, -v * y, -v
    _, sv, Vt = np.linalg.svd(A, full_matrices=2 * n < 9)  # the minimal case needs the null row
    if n > 4 and sv[-2] < 1e-12 * sv[0]:
        return None
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(H[2, 2]) < 1e-15:
        return None
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) <= 1e-12:
        return None
    return H


def _collinear(p: np.ndarray, tol: float = 1e-6) -> bool:
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        a, b, c = p[i], p[j], p[k]
        area = abs((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
        scale = max(np.abs(b - a).max(), np.abs(c - a).max(), 1e-12) ** 2
        if area < tol * scale:
            return True
    return False


def transfer_error(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    q = src @ H[:, :2].T + H[:, 2]
    w = q[:, 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    return np.hypot(q[:, 0] / w - dst[:, 0], q[:, 1] / w - dst[:, 1])


def estimate_homography(m: MatchSet, cfg: RansacConfig | None = None) -> Homography:
    """RANSAC homography from ``m.src_pts`` to ``m.dst_pts``."""
    cfg = cfg or RansacConfig()
    n = len(m)
    if n < 4:
        raise ValueError(f"at least 4 matches are required, got {n}")
    src = np.asarray(m.src_pts, dtype=float)
    dst = np.asarray(m.dst_pts, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    best_mask = None
    best_count = 0
    needed = cfg.max_iter
    it = 0
    log_fail = np.log(1.0 - cfg.confidence)
    while it < min(needed, cfg.max_iter):
        it += 1
        sample = rng.choice(n, 4, replace=False)
        if _collinear(src[sample]) or _collinear(dst[sample]):
            continue
        H = dlt_homography(src[sample], dst[sample])
        if H is None:
            continue
        mask = transfer_error(H, src, dst) < cfg.threshold
        count = int(mask.sum())
        if count > best_count:
            best_count, best_mask = count, mask
            w = count / n
            p_all = w**4
            if p_all >= 1.0:
                needed = 0
            elif p_all > 0:
                needed = int(np.ceil(log_fail / np.log(1.0 - p_all)))
    if best_mask is None or best_count < max(cfg.min_inliers, 4):
        raise EstimationFailed(f"best hypothesis has {best_count} inliers (< {cfg.min_inliers})")
    mask = best_mask
    H = None
    for _ in range(5):
        H_new = dlt_homography(src[mask], dst[mask])
        if H_new is None:
            break
        H = H_new
        new_mask = transfer_error(H, src, dst) < cfg.threshold
        if new_mask.sum() < max(cfg.min_inliers, 4):
            break
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
    if H is None:
        raise EstimationFailed("inlier refit is degenerate")
    mask = transfer_error(H, src, dst) < cfg.threshold
    count = int(mask.sum())
    if count < cfg.min_inliers:
        raise EstimationFailed(f"refit keeps only {count} inliers")
    return Homography(H, m.src, m.dst, count, count / n, mask)


def register(src_feats: Features, dst_feats: Features, ransac: RansacConfig | None = None,
             src: str = "src", dst: str = "dst", ratio: float = 0.8) -> tuple[Homography, MatchSet]:
    m = match(src_feats, dst_feats, ratio=ratio, src=src, dst=dst)
    if len(m) < 4:
        raise EstimationFailed(f"only {len(m)} matches")
    return estimate_homography(m, ransac), m


def dump_matches(path, m: MatchSet, h: Homography | None = None) -> None:
    """Write matches (and inlier flags when ``h`` is given) as JSON."""
    inl = h.inliers if h is not None and h.inliers is not None else np.zeros(len(m), dtype=bool)
    doc = {
        "src": m.src,
        "dst": m.dst,
        "homography": None if h is None else h.matrix.tolist(),
        "matches": [
            {"src_xy": [float(a), float(b)], "dst_xy": [float(c), float(d)], "distance": int(dist),
             "inlier": bool(f)}
            for (a, b), (c, d), dist, f in zip(m.src_pts, m.dst_pts, m.distance, inl)
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1))


# -- photometric refinement ---------------------------------------------------


@dataclass(frozen=True)
class RefineConfig:
    blur: float = 1.0
    max_iter: int = 15
    tol: float = 5e-3  # px of corner motion per step
    stride: int = 2  # sample every n-th pixel in each direction
    max_shift: float = 3.0  # px; larger drift from the feature estimate is rejected
    photometric: bool = False  # fit a quadratic tone map (exposure/gamma changes)
    tukey: float = 4.685



def _corner_motion(H0: np.ndarray, H1: np.ndarray, w: int, h: int) -> float:
    c = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], dtype=float)
    return float(np.abs(apply_homography(H0, c) - apply_homography(H1, c)).max())


def refine_homography(template: np.ndarray, image: np.ndarray, h, cfg: RefineConfig | None = None,
                      template_mask: np.ndarray | None = None) -> np.ndarray:
    """Inverse-compositional Lucas-Kanade on luminance.

    Refines ``h`` (template pixel -> image pixel) so that ``image(h p)``
    matches ``template(p)``; residuals get Tukey biweights so occluders and
    glare in ``image`` drop out. Returns the feature estimate unchanged
    if the refinement drifts more than ``cfg.max_shift`` pixels or fails to
    lower the robust cost.
    """
    cfg = cfg or RefineConfig()
    H0 = np.asarray(getattr(h, "matrix", h), dtype=float)
    T = ndimage.gaussian_filter(to_luminance(template), cfg.blur)
    I = ndimage.gaussian_filter(to_luminance(image), cfg.blur)
    ht, wt = T.shape
    hi, wi = I.shape
    # normalised coordinates keep the 8x8 system well conditioned
    s = 0.5 * max(wt, ht)
    N = np.array([[1 / s, 0, -(wt - 1) / (2 * s)], [0, 1 / s, -(ht - 1) / (2 * s)], [0, 0, 1.0]])
    Ninv = np.linalg.inv(N)
    m = max(2, int(np.ceil(3 * cfg.blur)))  # skip the blur-contaminated border
    yy, xx = np.mgrid[m:ht - m:cfg.stride, m:wt - m:cfg.stride]
    xs, ys = xx.ravel().astype(float), yy.ravel().astype(float)
    valid_t = np.ones(xs.shape, dtype=bool)
    if template_mask is not None:
        valid_t = ndimage.binary_erosion(template_mask, iterations=m)[yy, xx].ravel()
    gy, gx = np.gradient(T)
    Tv = T[yy, xx].ravel()
    gxv = gx[yy, xx].ravel() * s  # gradient w.r.t. normalised coordinates
    gyv = gy[yy, xx].ravel() * s
    xn = (xs - (wt - 1) / 2) / s
    yn = (ys - (ht - 1) / 2) / s
    SD = np.stack([gxv * xn, gxv * yn, gxv, gyv * xn, gyv * yn, gyv,
                   -xn * (gxv * xn + gyv * yn), -yn * (gxv * xn + gyv * yn)], axis=1).astype(np.float32)
    pts = np.stack([xs, ys, np.ones_like(xs)])

    def warped(H):
        q = H @ pts
        ok = q[2] > 1e-9
        u = np.where(ok, q[0] / np.where(ok, q[2], 1.0), -1.0)
        v = np.where(ok, q[1] / np.where(ok, q[2], 1.0), -1.0)
        ok &= (u >= 0) & (v >= 0) & (u <= wi - 1) & (v <= hi - 1) & valid_t
        vals = ndimage.map_coordinates(I, [v, u], order=1, mode="nearest", prefilter=False)
        return vals.astype(np.float32), ok

    def evaluate(H, scale=None, fit_w=None):
        vals, ok = warped(H)
        if ok.sum() < 64:
            return np.inf, None, None, scale
        if cfg.photometric:
            # quadratic tone map image -> template, fitted on the current inliers
            fw = ok.astype(np.float32) if fit_w is None else fit_w * ok
            X = np.stack([np.ones_like(vals), vals, vals * vals], axis=1)
            Xw = X * fw[:, None]
            coef = np.linalg.lstsq(Xw.T @ X, Xw.T @ Tv, rcond=None)[0]
            vals = (X @ coef).astype(np.float32)
        e = vals - Tv
        e[~ok] = 0.0
        if scale is None:
            scale = 1.4826 * float(np.median(np.abs(e[ok]))) + 1e-3
        c = cfg.tukey * scale
        r = np.minimum(np.abs(e) / c, 1.0)
        w = ((1.0 - r * r) ** 2 * ok).astype(np.float32)
        rho = (1.0 - (1.0 - r * r) ** 3) * c * c / 6.0
        return float(np.sum(rho * ok) / ok.sum()), e, w, scale

    cost, e, w, scale = evaluate(H0)
    if e is None:
        return H0
    H = H0.copy()
    for _ in range(cfg.max_iter):
        Sw = SD * w[:, None]
        try:
            dp = np.linalg.solve((SD.T @ Sw).astype(float), (Sw.T @ e).astype(float))
        except np.linalg.LinAlgError:
            break
        D = np.array([[1 + dp[0], dp[1], dp[2]], [dp[3], 1 + dp[4], dp[5]], [dp[6], dp[7], 1.0]])
        H_new = H @ Ninv @ np.linalg.inv(D) @ N
        H_new /= H_new[2, 2]
        c_new, e_new, w_new, _ = evaluate(H_new, scale, w)
        if not c_new < cost:
            break
        step = _corner_motion(H, H_new, wt, ht)
        H, cost, e, w = H_new, c_new, e_new, w_new
        if step < cfg.tol:
            break
    if H is H0 or _corner_motion(H0, H, wt, ht) > cfg.max_shift:
        return H0
    final = evaluate(H, scale, w)[0]
    start = evaluate(H0, scale, w)[0]
    return H if final < start else H0
