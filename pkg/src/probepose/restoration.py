"""Occlusion-free view restoration by warping the known workspace pattern.

The live frame is registered against the full pattern, and the pattern is
then warped through the recovered pattern->view homography into the
camera raster. Everything the camera saw (occluders, glare, dim light) is
replaced by ideal texture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EstimationFailed, NoMatches, RestorationFailed, TooFewFeatures
from .image import warp_homography
from .registration import (
    DetectorConfig,
    Features,
    Homography,
    MatchSet,
    RansacConfig,
    RefineConfig,
    _hamming_signed,
    detect_and_describe,
    estimate_homography,
    match,
    refine_homography,
)

MIN_INLIER_RATIO = 0.15


@dataclass(eq=False)
class PatternIndex:
    """Pattern features plus a spatial index for guided matching."""

    features: Features
    tree: cKDTree
    shape: tuple[int, int]

    @classmethod
    def build(cls, pattern: np.ndarray, max_features: int = 30000, cfg: DetectorConfig | None = None) -> "PatternIndex":
        feats = detect_and_describe(pattern, cfg, max_features=max_features)
        return cls(feats, cKDTree(feats.xy), pattern.shape[:2])


_INDEX_CACHE: dict[int, tuple[np.ndarray, PatternIndex]] = {}


def pattern_index(pattern: np.ndarray) -> PatternIndex:
    key = id(pattern)
    hit = _INDEX_CACHE.get(key)
    if hit is None or hit[0] is not pattern:
        hit = (pattern, PatternIndex.build(pattern))
        _INDEX_CACHE[key] = hit
    return hit[1]


@dataclass(eq=False)
class RestoredView:
    image: np.ndarray
    h_pattern_to_view: Homography
    inlier_ratio: float
    mask: np.ndarray | None = None  # pixels covered by the warped pattern


def _guided_matches(live: Features, index: PatternIndex, h: np.ndarray, radius: float,
                    max_distance: float) -> MatchSet:
    """Re-match every live keypoint against pattern keypoints near its predicted position."""
    hinv = np.linalg.inv(h)
    q = live.xy @ hinv[:, :2].T + hinv[:, 2]
    pred = q[:, :2] / q[:, 2:3]
    cand = index.tree.query_ball_point(pred, radius)
    li, pi, dist = [], [], []
    sp = index.features.signed
    sl = live.signed
    for i, c in enumerate(cand):
        if not c:
            continue
        d = _hamming_signed(sl[i:i + 1], sp[c])[0]
        j = int(np.argmin(d))
        if d[j] <= max_distance:
            li.append(i)
            pi.append(c[j])
            dist.append(d[j])
    if not li:
        raise NoMatches("guided matching found nothing")
    li = np.array(li)
    pi = np.array(pi)
    # keep one-to-one: a pattern keypoint claimed twice goes to the closer descriptor
    order = np.lexsort((li, np.array(dist)))
    _, first = np.unique(pi[order], return_index=True)
    keep = np.sort(order[first])
    li, pi = li[keep], pi[keep]
    return MatchSet(pi, li, np.rint(np.array(dist)[keep]).astype(np.int32),
                    index.features.xy[pi], live.xy[li], "pattern", "view")


def register_to_pattern(live_img: np.ndarray, pattern: np.ndarray, ransac: RansacConfig | None = None,
                        coarse_queries: int = 500, guided_radius: float = 6.0,
                        guided_max_distance: float = 80.0) -> Homography:
    """Pattern -> view homography of a live frame."""
    ransac = ransac or RansacConfig()
    index = pattern_index(pattern)
    live = detect_and_describe(live_img)
    coarse = live.subset(np.arange(min(coarse_queries, len(live))))
    m = match(coarse, index.features, src="view", dst="pattern")
    if len(m) < 4:
        raise EstimationFailed(f"only {len(m)} coarse matches")
    m = MatchSet(m.dst_idx, m.src_idx, m.distance, m.dst_pts, m.src_pts, "pattern", "view")
    h = estimate_homography(m, ransac)
    for _ in range(2):
        g = _guided_matches(live, index, h.matrix, guided_radius, guided_max_distance)
        if len(g) < 4:
            break
        h = estimate_homography(g, ransac)
    return h


def refine_to_live(live: np.ndarray, pattern: np.ndarray, h: np.ndarray, rounds: int = 2,
                   cfg: RefineConfig | None = None) -> np.ndarray:
    """Photometric polish of a pattern->view homography against the live frame."""
    cfg = cfg or RefineConfig(photometric=True)
    for _ in range(rounds):
        img, mask = warp_homography(pattern, h, live.shape[1], live.shape[0], return_mask=True)
        d = refine_homography(img, live, np.eye(3), cfg, template_mask=mask)
        if np.allclose(d, np.eye(3), atol=1e-12):
            break
        h = d @ h
        h = h / h[2, 2]
    return h


def restore_view(live: np.ndarray, pattern: np.ndarray, ransac: RansacConfig | None = None,
                 min_inlier_ratio: float = MIN_INLIER_RATIO, refine: bool = True) -> RestoredView:
    """Replace ``live`` by the pattern warped through the registered homography."""
    try:
        h = register_to_pattern(live, pattern, ransac)
    except (EstimationFailed, NoMatches, TooFewFeatures) as err:
        raise RestorationFailed(f"{type(err).__name__}: {err}") from err
    if h.inlier_ratio < min_inlier_ratio:
        raise RestorationFailed(f"inlier ratio {h.inlier_ratio:.3f} below {min_inlier_ratio}")
    if refine:
        h = Homography(refine_to_live(live, pattern, h.matrix), h.src, h.dst, h.inlier_count,
                       h.inlier_ratio, h.inliers)
    img, mask = warp_homography(pattern, h.matrix, live.shape[1], live.shape[0], return_mask=True)
    return RestoredView(img, h, h.inlier_ratio, mask)


def side_by_side(live: np.ndarray, restored: RestoredView, gap: int = 8) -> np.ndarray:
    """``live | restored`` debug panel."""
    h, w = live.shape[:2]
    out = np.full((h, 2 * w + gap, 3), 255, dtype=np.uint8)
    out[:, :w] = live
    out[:, w + gap:] = restored.image
    return out
