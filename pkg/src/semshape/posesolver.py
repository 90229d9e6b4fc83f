"""9-DoF pose recovery through semantic correspondence.

Keypoints picked from the observation (statistical outlier rejection, then
farthest-point sampling) are matched by descriptor cosine similarity against
a completed reconstruction whose points live in the normalized frame; the
resulting 2-frame pairs feed a RANSAC loop over minimal 3-pair similarity
solves, followed by a least-squares refit on the best inlier set.

``estimate`` chains the whole thing: it first matches against the undeformed
prototype to bootstrap an initial pose, uses that to carry the partial into
the normalized frame where the shape fit is well-posed, then re-matches
against the fitted reconstruction and solves again, keeping whichever solve
explains more correspondences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cloud import Pose, SemanticCloud, SimilarityTransform, Space
from .errors import DegenerateGeometryError, TooSparseError
from .geometry import farthest_point_sample, knn, umeyama_solve
from .shapemodel import (
    LinearShapeModel,
    PartialFit,
    ShapeParams,
    TrainConfig,
    fit_partial,
    synthesize,
    transfer_semantics,
)

_MIN_PAIRS = 3
_COLLINEAR_AREA = 1e-6
_SOR_NEIGHBORS = 8
_SOR_SIGMA = 2.0


@dataclass
class SolverConfig:
    """Correspondence and RANSAC knobs.

    ``lambda3``/``lambda4``/``lambda5`` are accepted for configuration
    compatibility with learned-loss pipelines and have no effect here.
    """

    keypoint_count: int = 96
    ransac_iters: int = 256
    inlier_thresh: float = 0.02  # normalized units, scaled by each candidate
    min_score: float = 0.0
    seed: int = 0
    lambda3: float = 15.0
    lambda4: float = 0.3
    lambda5: float = 0.3

    def __post_init__(self):
        if self.keypoint_count < _MIN_PAIRS:
            raise ValueError(f"keypoint_count must be >= {_MIN_PAIRS}")
        if self.ransac_iters < 1:
            raise ValueError("ransac_iters must be >= 1")
        if self.inlier_thresh <= 0:
            raise ValueError("inlier_thresh must be > 0")


@dataclass
class CorrespondenceSet:
    """Matched (observed point, normalized point) pairs with cosine scores."""

    observed: np.ndarray     # (M, 3) observation-frame coordinates
    normalized: np.ndarray   # (M, 3) matched model-frame coordinates
    scores: np.ndarray       # (M,)
    keypoints: SemanticCloud

    def __len__(self) -> int:
        return self.observed.shape[0]


@dataclass
class PoseSolution:
    pose: Pose
    transform: SimilarityTransform
    inlier_mask: np.ndarray
    inlier_ratio: float
    rms: float
    reliable: bool


@dataclass
class EstimateResult:
    pose: Pose
    params: ShapeParams
    reconstruction: SemanticCloud
    fit: PartialFit
    solution: PoseSolution
    observed_keypoints: np.ndarray   # matched keypoints, original camera frame
    predicted_normalized: np.ndarray  # their matched normalized coordinates
    match_scores: np.ndarray
    timings_ms: dict = field(default_factory=dict)


# -------------------------------------------------------------------------
# Stage ops
# -------------------------------------------------------------------------


def select_keypoints(partial: SemanticCloud, cfg: SolverConfig) -> SemanticCloud:
    """Drop statistical outliers, then farthest-point-sample the keypoints.

    A point is rejected when its mean distance to its 8 nearest neighbors
    exceeds the pool mean by more than two standard deviations. Raises
    :class:`TooSparseError` if fewer than 3 points survive.
    """
    if len(partial) < _MIN_PAIRS:
        raise TooSparseError(f"only {len(partial)} points; need >= {_MIN_PAIRS}")
    k = min(_SOR_NEIGHBORS, len(partial) - 1)
    if k >= 1:
        neighbor_idx = knn(partial.points, partial, k + 1)[:, 1:]  # drop self
        diffs = partial.points[neighbor_idx] - partial.points[:, None, :]
        mean_dist = np.sqrt(np.einsum("ijk,ijk->ij", diffs, diffs)).mean(axis=1)
        gate = mean_dist.mean() + _SOR_SIGMA * mean_dist.std()
        keep = np.flatnonzero(mean_dist <= gate)
    else:
        keep = np.arange(len(partial))
    if keep.size < _MIN_PAIRS:
        raise TooSparseError(f"outlier rejection left {keep.size} points")
    survivors = partial.take(keep)
    count = min(cfg.keypoint_count, len(survivors))
    return farthest_point_sample(survivors, count, seed=cfg.seed)


def match_semantic(
    keypoints: SemanticCloud,
    reconstruction: SemanticCloud,
    cfg: SolverConfig,
) -> CorrespondenceSet:
    """Pair each keypoint with its most cosine-similar reconstruction row.

    Matching reads descriptors only, so it is invariant to any rigid motion
    or uniform rescale of the keypoint coordinates. Pairs scoring below
    ``min_score`` are discarded; fewer than 3 surviving pairs is an error.
    """
    if keypoints.descriptors is None or reconstruction.descriptors is None:
        raise ValueError("both clouds need descriptors for semantic matching")
    if keypoints.descriptor_dim != reconstruction.descriptor_dim:
        raise ValueError(
            f"descriptor dims differ: {keypoints.descriptor_dim} vs "
            f"{reconstruction.descriptor_dim}"
        )
    query = np.asarray(keypoints.descriptors, dtype=np.float64)
    bank = np.asarray(reconstruction.descriptors, dtype=np.float64)
    q_norm = np.linalg.norm(query, axis=1, keepdims=True)
    b_norm = np.linalg.norm(bank, axis=1, keepdims=True)
    q_norm[q_norm == 0] = 1.0
    b_norm[b_norm == 0] = 1.0
    sim = (query / q_norm) @ (bank / b_norm).T
    best = np.argmax(sim, axis=1)  # first max on ties = lowest index
    scores = sim[np.arange(len(best)), best]
    keep = np.flatnonzero(scores >= cfg.min_score)
    if keep.size < _MIN_PAIRS:
        raise TooSparseError(
            f"only {keep.size} matches at min_score={cfg.min_score}; need >= {_MIN_PAIRS}"
        )
    return CorrespondenceSet(
        observed=keypoints.points[keep].copy(),
        normalized=reconstruction.points[best[keep]].copy(),
        scores=scores[keep].copy(),
        keypoints=keypoints,
    )


def _triangle_area(p: np.ndarray) -> float:
    return 0.5 * float(np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])))


def solve_pose(
    corr: CorrespondenceSet,
    model_extents,
    cfg: SolverConfig,
) -> PoseSolution:
    """RANSAC over minimal 3-pair similarity solves, then refit on inliers.

    Residuals are measured in the observation frame and compared against
    ``inlier_thresh`` scaled by the candidate's uniform scale (so the gate is
    expressed in normalized units). The refit rotation is re-orthonormalized
    through SVD. ``reliable`` is False when fewer than 3 pairs end up inliers.
    """
    n = len(corr)
    if n < _MIN_PAIRS:
        raise TooSparseError(f"{n} correspondences; need >= {_MIN_PAIRS}")
    src = corr.normalized
    dst = corr.observed

    best_count = -1
    best_mask = None
    for it in range(cfg.ransac_iters):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, it])))
        sample = rng.choice(n, _MIN_PAIRS, replace=False)
        if _triangle_area(src[sample]) <= _COLLINEAR_AREA:
            continue
        try:
            cand = umeyama_solve(src[sample], dst[sample])
        except DegenerateGeometryError:
            continue
        residual = np.linalg.norm(cand.apply(src) - dst, axis=1)
        mask = residual < cfg.inlier_thresh * cand.scale
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None:
        raise DegenerateGeometryError(
            "every minimal sample was degenerate (collinear correspondences)"
        )

    refit_idx = np.flatnonzero(best_mask)
    if refit_idx.size < _MIN_PAIRS:  # pathological: fall back to all pairs
        refit_idx = np.arange(n)
    transform = umeyama_solve(src[refit_idx], dst[refit_idx])
    u, _, vt = np.linalg.svd(transform.rotation)
    fix = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        fix[2] = -1.0
    transform = SimilarityTransform(
        u @ np.diag(fix) @ vt, transform.translation, transform.scale
    )

    residual = np.linalg.norm(transform.apply(src) - dst, axis=1)
    mask = residual < cfg.inlier_thresh * transform.scale
    count = int(mask.sum())
    if count >= _MIN_PAIRS:
        rms = float(np.sqrt((residual[mask] ** 2).mean()))
    else:
        rms = float(np.sqrt((residual**2).mean()))
    return PoseSolution(
        pose=Pose.from_similarity(transform, model_extents),
        transform=transform,
        inlier_mask=mask,
        inlier_ratio=count / n,
        rms=rms,
        reliable=count >= _MIN_PAIRS,
    )


# -------------------------------------------------------------------------
# End-to-end estimate
# -------------------------------------------------------------------------


def _shift(cloud: SemanticCloud, offset: np.ndarray, space: Space) -> SemanticCloud:
    desc = None if cloud.descriptors is None else cloud.descriptors
    return SemanticCloud(cloud.points + offset, desc, space)


def estimate(
    model: LinearShapeModel,
    partial: SemanticCloud,
    solver_cfg: SolverConfig | None = None,
    train_cfg: TrainConfig | None = None,
) -> EstimateResult:
    """Recover pose, shape params and the completed reconstruction from a
    camera-frame partial observation with descriptors."""
    solver_cfg = solver_cfg or SolverConfig()
    train_cfg = train_cfg or TrainConfig()
    if partial.space is not Space.CAMERA:
        raise ValueError("estimate expects a camera-frame partial")
    if partial.descriptors is None:
        raise ValueError("estimate needs per-point descriptors on the partial")
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    center = partial.centroid()
    centered = _shift(partial, -center, Space.CAMERA)
    keypoints = select_keypoints(centered, solver_cfg)
    timings["keypoints"] = (time.perf_counter() - t0) * 1e3

    # bootstrap: correspondences against the undeformed prototype
    t0 = time.perf_counter()
    prototype_cloud = transfer_semantics(model, ShapeParams.neutral(model.basis_dim))
    bootstrap: PoseSolution | None = None
    try:
        corr0 = match_semantic(keypoints, prototype_cloud, solver_cfg)
        bootstrap = solve_pose(corr0, prototype_cloud.extents(), solver_cfg)
    except (TooSparseError, DegenerateGeometryError):
        bootstrap = None
    timings["bootstrap"] = (time.perf_counter() - t0) * 1e3

    # carry the partial into the normalized frame and fit the shape there
    t0 = time.perf_counter()
    if bootstrap is not None:
        inv = bootstrap.transform.inverse()
        fit_input = SemanticCloud(
            inv.apply(centered.points), centered.descriptors, Space.NOCS
        )
    else:
        scale_guess = 1.0 / max(float(np.linalg.norm(centered.extents())), 1e-9)
        fit_input = SemanticCloud(
            centered.points * scale_guess, centered.descriptors, Space.NOCS
        )
    fit = fit_partial(model, fit_input, train_cfg)
    reconstruction = transfer_semantics(model, fit.params)
    timings["fit"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    solution = None
    corr = None
    try:
        corr = match_semantic(keypoints, reconstruction, solver_cfg)
        solution = solve_pose(corr, reconstruction.extents(), solver_cfg)
    except (TooSparseError, DegenerateGeometryError):
        solution = None
    if solution is None and bootstrap is None:
        raise TooSparseError("pose solve failed against prototype and reconstruction")
    if solution is None or (
        bootstrap is not None
        and int(bootstrap.inlier_mask.sum()) > int(solution.inlier_mask.sum())
    ):
        solution = bootstrap
        corr = corr0
        reconstruction = prototype_cloud
        params = ShapeParams.neutral(model.basis_dim)
    else:
        params = fit.params
    timings["solve"] = (time.perf_counter() - t0) * 1e3

    pose = Pose(
        solution.pose.rotation,
        solution.pose.translation + center,
        solution.pose.size,
    )
    return EstimateResult(
        pose=pose,
        params=params,
        reconstruction=reconstruction,
        fit=fit,
        solution=solution,
        observed_keypoints=corr.observed + center,
        predicted_normalized=corr.normalized,
        match_scores=corr.scores,
        timings_ms=timings,
    )
