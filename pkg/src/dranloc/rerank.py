"""Sparse-to-dense hypercolumn matching, PnP+RANSAC, and candidate re-ranking."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DepthMismatch, NoModelFound, OutOfBounds, TooFewMatches
from .feature import in_bounds, l2_normalize_texels, sample_many
from .geometry import Z_MIN
from .pnp import in_front, p3p, refine_pose
from .scene_map import keyframe_arrays


@dataclass(frozen=True, eq=False)
class Match2D3D:
    point_id: int
    world: np.ndarray
    query_pixel: np.ndarray
    score: float


@dataclass(frozen=True, eq=False)
class PnPResult:
    pose: object
    inlier_ids: list
    num_inliers: int
    reproj_threshold: float


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    inlier_threshold_px: float = 8.0
    confidence: float = 0.999
    min_inliers: int = 12
    rng_seed: int = 0
    refine_iterations: int = 10

    def __post_init__(self):
        if not self.inlier_threshold_px > 0:
            raise ValueError("inlier threshold must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True)
class RerankConfig:
    exclusion_radius: float = 4.0
    ratio_threshold: float = 0.9
    ransac: RansacConfig = field(default_factory=RansacConfig)


@dataclass
class RerankResult:
    ranking: list                 # [(keyframe_id, PnPResult)], best first
    failed: list                  # keyframe ids without a model, retrieval order
    diagnostics: dict             # keyframe_id -> {"matches", "inliers", "error"}

    @property
    def order(self):
        return [k for k, _ in self.ranking] + list(self.failed)


# ---------------------------------------------------------------------------
# matching
# ---------------------------------------------------------------------------

def _renormalize_blocks(desc, hyp):
    out = np.array(desc, dtype=np.float64, copy=True)
    for sl in hyp.block_slices():
        out[..., sl] = l2_normalize_texels(out[..., sl])
    return out


def sample_sparse_descriptors(h_k, observations):
    """Bilinear hypercolumn descriptors at observation pixels.

    Returns ``(pairs, skipped)``: ``[(point_id, descriptor)]`` and the ids whose
    pixels fell outside the grid.
    """
    observations = list(observations)
    if not observations:
        return [], []
    ids = np.array([int(i) for i, _ in observations], dtype=np.int64)
    pix = np.array([np.asarray(p, dtype=float) for _, p in observations]).reshape(-1, 2)
    ok = in_bounds(h_k.fmap, pix)
    desc = np.zeros((len(ids), h_k.fmap.depth))
    if ok.any():
        desc[ok] = _renormalize_blocks(sample_many(h_k.fmap, pix[ok]), h_k)
    return [(int(i), d) for i, d, good in zip(ids, desc, ok) if good], [int(i) for i in ids[~ok]]


def correlate(h_q, d):
    """Per-texel dot product of the query hypercolumn with one descriptor, (H, W)."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != h_q.fmap.depth:
        raise DepthMismatch(f"descriptor depth {d.shape[-1]} != hypercolumn depth {h_q.fmap.depth}")
    return h_q.fmap.data.astype(np.float64) @ d


def _accept(m1, m2, ratio_threshold):
    return (m1 > 0) & (m2 <= ratio_threshold * m1)


def best_match_with_ratio(corr, exclusion_radius_texels=4.0, ratio_threshold=0.9):
    """Global peak ``((x, y), score)`` if it passes the ratio test, else None."""
    if exclusion_radius_texels < 1:
        raise ValueError("exclusion radius must be >= 1")
    corr = np.asarray(corr, dtype=np.float64)
    h, w = corr.shape
    best, m1, m2 = _kernels.ratio_peaks(corr.reshape(-1, 1), w, float(exclusion_radius_texels))
    if not _accept(m1[0], m2[0], ratio_threshold):
        return None
    return (int(best[0] % w), int(best[0] // w)), float(m1[0])


def match_sparse_to_dense(h_q, sparse, scene_map, config=RerankConfig()):
    """Correlate every sparse descriptor against the query and keep ratio-test winners."""
    sparse = list(sparse)
    if not sparse:
        return []
    ids = np.array([i for i, _ in sparse], dtype=np.int64)
    D = np.vstack([d for _, d in sparse])
    if D.shape[1] != h_q.fmap.depth:
        raise DepthMismatch(f"descriptor depth {D.shape[1]} != hypercolumn depth {h_q.fmap.depth}")
    fm = h_q.fmap
    corr = fm.data.reshape(-1, fm.depth).astype(np.float64) @ D.T
    best, m1, m2 = _kernels.ratio_peaks(np.ascontiguousarray(corr), fm.width, float(config.exclusion_radius))
    keep = _accept(m1, m2, config.ratio_threshold)
    xyz = scene_map.point_xyz[scene_map.rows_of(ids[keep])] if keep.any() else np.zeros((0, 3))
    out = []
    for k, j in enumerate(np.flatnonzero(keep)):
        tx, ty = best[j] % fm.width, best[j] // fm.width
        out.append(Match2D3D(int(ids[j]), xyz[k], np.array([tx * fm.stride, ty * fm.stride], dtype=float),
                             float(m1[j])))
    return out


# ---------------------------------------------------------------------------
# PnP + RANSAC
# ---------------------------------------------------------------------------

def _errors(pose, camera, world, pixels):
    return _kernels.reprojection_errors(pose.R, pose.t, camera.intrinsics, world, pixels, Z_MIN)


def _needed_iterations(inlier_ratio, confidence, sample_size, cap):
    good = inlier_ratio ** sample_size
    if good <= 0:
        return cap
    if good >= 1:
        return 1
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / math.log(1.0 - good))))


def pnp_ransac(matches, camera, config=RansacConfig(), stream=0):
    """P3P-RANSAC with a fourth disambiguation point, then robust Gauss-Newton.

    ``stream`` picks an independent random stream; re-ranking passes the
    keyframe id so per-candidate results do not depend on evaluation order.
    """
    matches = list(matches)
    n = len(matches)
    if n < 4:
        raise TooFewMatches(f"PnP needs at least 4 matches, got {n}")
    ids = np.array([m.point_id for m in matches], dtype=np.int64)
    world = np.vstack([m.world for m in matches]).astype(float)
    pixels = np.vstack([m.query_pixel for m in matches]).astype(float)
    rays = camera.backproject(pixels)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    thr = config.inlier_threshold_px
    rng = np.random.default_rng([int(config.rng_seed), int(stream)])

    best_pose, best_count, best_score = None, 0, np.inf
    needed, it = config.max_iterations, 0
    while it < min(needed, config.max_iterations):
        it += 1
        idx = rng.choice(n, size=4, replace=False)
        cands = p3p(rays[idx[:3]], world[idx[:3]])
        if not cands:
            continue
        check = [_errors(p, camera, world[idx[3:]], pixels[idx[3:]])[0] for p in cands]
        pose = cands[int(np.argmin(check))]
        err = _errors(pose, camera, world, pixels)
        inl = err < thr
        count = int(inl.sum())
        score = float(np.minimum(err, thr).sum())
        if count > best_count or (count == best_count and score < best_score):
            best_pose, best_count, best_score = pose, count, score
            needed = _needed_iterations(count / n, config.confidence, 4, config.max_iterations)
    if best_pose is None or best_count < config.min_inliers:
        raise NoModelFound(f"best model has {best_count} inliers (< {config.min_inliers})")

    inl = _errors(best_pose, camera, world, pixels) < thr
    refined = refine_pose(best_pose, camera, world[inl], pixels[inl], config.refine_iterations)
    if np.all(in_front(refined, world[inl])):
        # keep the refinement unless it fits worse in the truncated-quadratic sense;
        # a raw inlier count can favour a biased model that stretches the threshold
        e_ref = _errors(refined, camera, world, pixels)
        e_old = _errors(best_pose, camera, world, pixels)
        if np.minimum(e_ref, thr) @ np.minimum(e_ref, thr) <= np.minimum(e_old, thr) @ np.minimum(e_old, thr):
            best_pose, inl = refined, e_ref < thr
    count = int(inl.sum())
    if count < config.min_inliers:
        raise NoModelFound(f"refined model has {count} inliers (< {config.min_inliers})")
    return PnPResult(best_pose, [int(i) for i in ids[inl]], count, thr)


# ---------------------------------------------------------------------------
# re-ranking
# ---------------------------------------------------------------------------

def keyframe_sparse_descriptors(h_k, scene_map, keyframe_id):
    ids, _, pix = keyframe_arrays(scene_map, keyframe_id)
    return sample_sparse_descriptors(h_k, zip(ids, pix))


def rerank_candidates(query_hyp, candidates, scene_map, camera, config=RerankConfig()):
    """Match + PnP per candidate, then sort by inlier count (ties: retrieval order)."""
    results, failed, diag = [], [], {}
    for rank, (kf_id, h_k) in enumerate(candidates):
        info = {"retrieval_rank": rank, "matches": 0, "inliers": 0, "error": None}
        diag[kf_id] = info
        try:
            sparse, skipped = keyframe_sparse_descriptors(h_k, scene_map, kf_id)
            info["skipped"] = len(skipped)
            matches = match_sparse_to_dense(query_hyp, sparse, scene_map, config)
            info["matches"] = len(matches)
            res = pnp_ransac(matches, camera, config.ransac, stream=kf_id)
        except (TooFewMatches, NoModelFound, OutOfBounds) as exc:
            info["error"] = f"{type(exc).__name__}: {exc}"
            failed.append(kf_id)
            continue
        info["inliers"] = res.num_inliers
        results.append((rank, kf_id, res))
    results.sort(key=lambda r: (-r[2].num_inliers, r[0]))
    return RerankResult([(k, r) for _, k, r in results], failed, diag)
