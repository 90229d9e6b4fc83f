"""Semantic feature aggregation and the category semantic prototype.

Per-point descriptors from dense observations are pooled onto reconstruction
points by k-nearest-neighbor averaging; averaging those per-instance matrices
across a category gives the semantic prototype that every synthesized cloud
then inherits row-for-row.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .cloud import SemanticCloud
from .geometry import knn
from .io import write_ply
from .shapemodel import transfer_semantics  # re-exported: lives with synthesize

__all__ = [
    "DescriptorSource",
    "DescriptorCloud",
    "aggregate_instance_features",
    "build_semantic_prototype",
    "transfer_semantics",
    "pooled_pca_projection",
    "export_feature_pca",
    "K_AGG",
]

K_AGG = 200  # neighbors pooled per reconstruction point


class DescriptorSource(Enum):
    INGESTED = "ingested"
    PROCEDURAL = "procedural"


@dataclass
class DescriptorCloud:
    """A cloud whose descriptors are mandatory, tagged with their origin."""

    cloud: SemanticCloud
    source: DescriptorSource = DescriptorSource.PROCEDURAL

    def __post_init__(self):
        if self.cloud.descriptors is None:
            raise ValueError("DescriptorCloud requires per-point descriptors")

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    @property
    def descriptors(self) -> np.ndarray:
        return self.cloud.descriptors


def aggregate_instance_features(
    recon: SemanticCloud,
    dense: SemanticCloud | DescriptorCloud,
    k_agg: int = K_AGG,
) -> np.ndarray:
    """Mean descriptor of the ``k_agg`` nearest dense points, per recon point.

    ``k_agg`` is clamped to the dense cloud size. Returns an (I, C) float64
    matrix; every output row is a convex combination of input rows.
    """
    if isinstance(dense, DescriptorCloud):
        dense = dense.cloud
    if dense.descriptors is None:
        raise ValueError("dense cloud has no descriptors to aggregate")
    recon.require_nonempty("aggregate_instance_features")
    dense.require_nonempty("aggregate_instance_features")
    if k_agg < 1:
        raise ValueError(f"k_agg must be >= 1, got {k_agg}")
    k = min(k_agg, len(dense))
    neighbor_idx = knn(recon.points, dense, k)
    feats = np.asarray(dense.descriptors, dtype=np.float64)
    return feats[neighbor_idx].mean(axis=1)


def build_semantic_prototype(feature_mats: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of per-instance feature matrices.

    Summation runs over values sorted per element, so the result is exactly
    invariant to the order instances are supplied in.
    """
    if not feature_mats:
        raise ValueError("need at least one feature matrix")
    mats = [np.asarray(m, dtype=np.float64) for m in feature_mats]
    shape = mats[0].shape
    if len(shape) != 2:
        raise ValueError(f"feature matrices must be 2-D, got {shape}")
    for i, m in enumerate(mats):
        if m.shape != shape:
            raise ValueError(f"matrix {i} has shape {m.shape}, expected {shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError(f"matrix {i} contains non-finite values")
    stack = np.stack(mats, axis=0)
    stack.sort(axis=0, kind="stable")
    return stack.sum(axis=0) / len(mats)


# -------------------------------------------------------------------------
# Shared-basis PCA visualization
# -------------------------------------------------------------------------


def pooled_pca_projection(descriptor_mats: list[np.ndarray]) -> list[np.ndarray]:
    """Project every descriptor matrix onto the top-3 principal axes of the
    pooled rows (shared centers and loadings across all inputs).

    Sign convention: each component's largest-|loading| entry is positive,
    making the projection deterministic. Requires descriptor dim >= 3.
    """
    if not descriptor_mats:
        raise ValueError("need at least one descriptor matrix")
    mats = [np.asarray(m, dtype=np.float64) for m in descriptor_mats]
    dim = mats[0].shape[1]
    if dim < 3:
        raise ValueError(f"PCA coloring needs descriptor dim >= 3, got {dim}")
    for m in mats:
        if m.ndim != 2 or m.shape[1] != dim:
            raise ValueError("descriptor matrices disagree on feature dimension")
    pooled = np.concatenate(mats, axis=0)
    center = pooled.mean(axis=0)
    centered = pooled - center
    cov = centered.T @ centered / max(len(pooled) - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:3]
    components = eigvecs[:, order].T  # (3, C)
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return [(m - center) @ components.T for m in mats]


def export_feature_pca(
    clouds: list[SemanticCloud],
    out_paths: list,
) -> list[np.ndarray]:
    """Write one colored PLY per cloud: RGB = top-3 pooled-PCA projections,
    min-max normalized over the whole pool. Returns the uint8 color arrays."""
    if len(clouds) != len(out_paths):
        raise ValueError("one output path per cloud required")
    for c in clouds:
        if c.descriptors is None:
            raise ValueError("all clouds need descriptors for PCA coloring")
    projections = pooled_pca_projection([c.descriptors for c in clouds])
    pool = np.concatenate(projections, axis=0)
    lo = pool.min(axis=0)
    span = pool.max(axis=0) - lo
    span[span == 0] = 1.0
    colors = []
    for cloud, proj, path in zip(clouds, projections, out_paths):
        rgb = np.clip((proj - lo) / span, 0.0, 1.0)
        rgb8 = np.round(rgb * 255.0).astype(np.uint8)
        write_ply(path, cloud.points, rgb8)
        colors.append(rgb8)
    return colors
