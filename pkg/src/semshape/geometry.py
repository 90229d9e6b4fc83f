"""Point-cloud primitives: Chamfer distances, keypoint quality terms,
sampling, exact kNN and the closed-form similarity solve.

Everything here is deterministic: nearest-neighbor and sampling ties resolve
to the lowest index, and random choices are driven by explicit seeds.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .cloud import Pose, SemanticCloud, SimilarityTransform
from .errors import DegenerateGeometryError, NoInliersError

# Outlier gate radius (normalized units) and keypoint crowding radius.
TAU1 = 0.1
TAU2 = 0.2


# -------------------------------------------------------------------------
# Chamfer family
# -------------------------------------------------------------------------


def chamfer_distance(
    a: SemanticCloud,
    b: SemanticCloud,
    squared: bool = True,
    symmetric: bool = True,
) -> float:
    """Mean nearest-neighbor distance from ``a`` into ``b``.

    Parameters
    ----------
    squared : bool
        Use squared Euclidean distances (the training/reporting form).
    symmetric : bool
        Add the mean over ``b`` of distances into ``a``.
    """
    a.require_nonempty("chamfer_distance")
    b.require_nonempty("chamfer_distance")
    a.require_same_space(b)
    if symmetric:
        _, sq_ab, _, sq_ba = backend.nearest_both(a.points, b.points)
        if squared:
            return float(sq_ab.mean() + sq_ba.mean())
        return float(np.sqrt(sq_ab).mean() + np.sqrt(sq_ba).mean())
    _, sq_ab = backend.nearest_neighbors(a.points, b.points)
    if squared:
        return float(sq_ab.mean())
    return float(np.sqrt(sq_ab).mean())


def object_aware_filter(
    points: SemanticCloud,
    model: SemanticCloud,
    gt_pose: Pose,
    tau1: float = TAU1,
) -> SemanticCloud:
    """Keep observed points that land near the instance model.

    Each camera-frame point is mapped through the inverse ground-truth pose
    into the normalized frame; it survives when its distance to the nearest
    model point is strictly below ``tau1``.  Order and descriptors are
    preserved.  An empty result is returned flagged ``all_outliers``.
    """
    points.require_nonempty("object_aware_filter")
    model.require_nonempty("object_aware_filter")
    if tau1 <= 0:
        raise ValueError(f"tau1 must be > 0, got {tau1}")
    mapped = gt_pose.to_normalized(points.points)
    _, sqd = backend.nearest_neighbors(mapped, model.points)
    keep = np.flatnonzero(sqd < tau1 * tau1)
    return points.take(keep)


def object_aware_chamfer(keypoints: SemanticCloud, filtered: SemanticCloud) -> float:
    """One-sided mean Euclidean distance from keypoints into the filtered
    observation. Raises :class:`NoInliersError` when nothing survived the
    filter."""
    keypoints.require_nonempty("object_aware_chamfer")
    if len(filtered) == 0:
        raise NoInliersError("filtered observation is empty (all outliers)")
    keypoints.require_same_space(filtered)
    _, sqd = backend.nearest_neighbors(keypoints.points, filtered.points)
    return float(np.sqrt(sqd).mean())


def diversity_penalty(keypoints: SemanticCloud, tau2: float = TAU2) -> float:
    """Crowding penalty: sum of ``max(0, tau2 - dist)`` over unordered
    keypoint pairs. Zero when all pairwise distances exceed ``tau2``."""
    keypoints.require_nonempty("diversity_penalty")
    if tau2 <= 0:
        raise ValueError(f"tau2 must be > 0, got {tau2}")
    pts = keypoints.points
    n = len(pts)
    if n < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    iu = np.triu_indices(n, k=1)
    short = tau2 - dist[iu]
    return float(np.sum(short[short > 0]))


# -------------------------------------------------------------------------
# Sampling and exact kNN
# -------------------------------------------------------------------------


def farthest_point_sample(
    cloud: SemanticCloud,
    count: int,
    seed: int = 0,
    start_index: int | None = None,
) -> SemanticCloud:
    """Greedy farthest-point subsample of ``count`` points.

    The first point is a seeded uniform pick (or ``start_index`` when given);
    each subsequent pick maximizes the distance to everything already chosen,
    ties toward the lowest index. Descriptors ride along.
    """
    cloud.require_nonempty("farthest_point_sample")
    if not 1 <= count <= len(cloud):
        raise ValueError(f"count must be in [1, {len(cloud)}], got {count}")
    if start_index is None:
        rng = np.random.Generator(np.random.PCG64(seed))
        start_index = int(rng.integers(len(cloud)))
    idx = backend.farthest_point_indices(cloud.points, count, start_index)
    return cloud.take(idx)


def knn(query, cloud: SemanticCloud, k: int) -> np.ndarray:
    """Exact k-nearest-neighbor indices into ``cloud``.

    ``query`` may be a single (3,) point or a (Q, 3) batch; returns shape
    ``(k,)`` or ``(Q, k)``. Indices come back in ascending distance order
    with ties broken by the lower index — equal to a full exhaustive scan.
    """
    cloud.require_nonempty("knn")
    if not 1 <= k <= len(cloud):
        raise ValueError(f"k must be in [1, {len(cloud)}], got {k}")
    q = np.asarray(query, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    if q.shape[1] != 3:
        raise ValueError(f"query must be (3,) or (Q, 3), got {q.shape}")
    out = np.empty((q.shape[0], k), dtype=np.int64)
    pts = cloud.points
    step = max(1, 1_000_000 // max(len(pts), 1))
    for lo in range(0, q.shape[0], step):
        hi = min(lo + step, q.shape[0])
        diff = q[lo:hi, None, :] - pts[None, :, :]
        d = np.einsum("ijk,ijk->ij", diff, diff)
        order = np.argsort(d, axis=1, kind="stable")  # stable: ties by index
        out[lo:hi] = order[:, :k]
    return out[0] if single else out


def kmeanspp_init(corpus, count: int, seed: int = 0) -> np.ndarray:
    """K-Means++ seeding over pooled corpus points.

    ``corpus`` is a list of clouds (or arrays); their points are pooled and
    ``count`` seeds drawn with the classic D^2 weighting. Returns the chosen
    points as a ``(count, 3)`` array. Fully determined by ``seed``.
    """
    pools = []
    for item in corpus:
        pts = item.points if isinstance(item, SemanticCloud) else np.asarray(item, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"corpus entries must be (N, 3), got {pts.shape}")
        pools.append(pts)
    if not pools:
        raise ValueError("corpus is empty")
    pooled = np.concatenate(pools, axis=0)
    n = pooled.shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"count must be in [1, {n}], got {count}")

    rng = np.random.Generator(np.random.PCG64(seed))
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = int(rng.integers(n))
    diff = pooled - pooled[chosen[0]]
    min_sqd = np.einsum("ij,ij->i", diff, diff)
    taken = np.zeros(n, dtype=bool)
    taken[chosen[0]] = True
    for k in range(1, count):
        total = float(min_sqd.sum())
        if total > 0.0:
            r = rng.random() * total
            nxt = int(np.searchsorted(np.cumsum(min_sqd), r, side="right"))
            nxt = min(nxt, n - 1)
            if taken[nxt]:  # landed on a zero-mass slot via fp roundoff
                nxt = int(np.flatnonzero(~taken)[0])
        else:
            nxt = int(np.flatnonzero(~taken)[0])
        chosen[k] = nxt
        taken[nxt] = True
        diff = pooled - pooled[nxt]
        np.minimum(min_sqd, np.einsum("ij,ij->i", diff, diff), out=min_sqd)
    return pooled[chosen].copy()


# -------------------------------------------------------------------------
# Closed-form similarity alignment
# -------------------------------------------------------------------------


def umeyama_solve(source, target, with_scale: bool = True) -> SimilarityTransform:
    """Least-squares similarity ``target ~ scale * R @ source + t``.

    Closed form via SVD of the cross-covariance with the determinant sign
    fix, so the returned rotation is always proper (det +1) even when the
    best unconstrained map would reflect. Requires >= 3 pairs and a source
    of rank >= 2 after centering; collinear input raises
    :class:`DegenerateGeometryError`.
    """
    src = np.asarray(source.points if isinstance(source, SemanticCloud) else source, dtype=np.float64)
    tgt = np.asarray(target.points if isinstance(target, SemanticCloud) else target, dtype=np.float64)
    if src.shape != tgt.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"source/target must be matching (N, 3) arrays, got {src.shape} vs {tgt.shape}")
    n = src.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 correspondences, got {n}")

    mu_s = src.mean(axis=0)
    mu_t = tgt.mean(axis=0)
    src_c = src - mu_s
    tgt_c = tgt - mu_t

    sing = np.linalg.svd(src_c, compute_uv=False)
    if sing[1] <= max(sing[0] * 1e-10, 1e-300):
        raise DegenerateGeometryError(
            "source points are collinear (centered rank < 2); cannot recover rotation"
        )

    cov = tgt_c.T @ src_c / n
    u, d, vt = np.linalg.svd(cov)
    s_fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s_fix[2] = -1.0
    rotation = u @ np.diag(s_fix) @ vt

    if with_scale:
        var_s = np.einsum("ij,ij->", src_c, src_c) / n
        scale = float(np.dot(d, s_fix) / var_s)
        if not (np.isfinite(scale) and scale > 0):
            raise DegenerateGeometryError(f"recovered scale {scale} is not positive")
    else:
        scale = 1.0
    translation = mu_t - scale * rotation @ mu_s
    return SimilarityTransform(rotation, translation, scale)
