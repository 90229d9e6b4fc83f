"""Core value types: tagged point clouds, similarity transforms, 9-DoF poses.

Coordinate conventions
----------------------
Normalized (model) frame: each complete object is centered on its centroid and
uniformly scaled so the tight axis-aligned bounding-box diagonal equals 1.
Camera frame: metric coordinates as observed.

A :class:`Pose` maps normalized coordinates into the camera frame.  Because the
normalized bbox diagonal is 1 by construction, the uniform scale of that map
equals ``norm(size)``, where ``size`` holds the oriented bbox extents of the
object in metric units.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import EmptyCloudError, SpaceMismatchError

ORTHONORMAL_TOL = 1e-9


class Space(Enum):
    """Coordinate frame tag carried by every cloud."""

    NOCS = "nocs"
    CAMERA = "camera"


class Symmetry(Enum):
    """Category symmetry used by the pose metrics."""

    NONE = "none"
    AXIAL_Z = "axial_z"


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got {pts.shape}")
    if pts.size and not np.all(np.isfinite(pts)):
        raise ValueError("points contain non-finite values")
    return pts


@dataclass
class SemanticCloud:
    """Point set with an optional per-point descriptor matrix.

    Parameters
    ----------
    points : (N, 3) float array
    descriptors : (N, C) float array or None
        Per-point feature rows aligned with ``points``.
    space : Space
        Frame tag; operations refuse to mix frames.

    An empty cloud (N == 0) is only ever produced by outlier filtering, where
    it is returned with ``all_outliers=True``; everything else requires N >= 1.
    """

    points: np.ndarray
    descriptors: np.ndarray | None = None
    space: Space = Space.NOCS
    all_outliers: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.points = _as_points(self.points)
        if self.descriptors is not None:
            desc = np.asarray(self.descriptors)
            if desc.ndim != 2 or desc.shape[0] != self.points.shape[0]:
                raise ValueError(
                    f"descriptors must be (N, C) with N={self.points.shape[0]}, "
                    f"got {desc.shape}"
                )
            if desc.size and not np.all(np.isfinite(desc)):
                raise ValueError("descriptors contain non-finite values")
            self.descriptors = desc
        if len(self.points) == 0 and not self.all_outliers:
            raise EmptyCloudError("cloud has no points")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def descriptor_dim(self) -> int:
        return 0 if self.descriptors is None else self.descriptors.shape[1]

    def require_nonempty(self, what: str = "operation") -> None:
        if len(self) == 0:
            raise EmptyCloudError(f"{what} requires a non-empty cloud")

    def require_same_space(self, other: "SemanticCloud") -> None:
        if self.space is not other.space:
            raise SpaceMismatchError(
                f"clouds live in different frames: {self.space.value} vs {other.space.value}"
            )

    def take(self, index) -> "SemanticCloud":
        """Row-subset by integer index array, descriptors carried along."""
        idx = np.asarray(index, dtype=np.int64)
        desc = None if self.descriptors is None else self.descriptors[idx]
        if idx.size == 0:
            return SemanticCloud(
                np.empty((0, 3)), None if desc is None else desc, self.space,
                all_outliers=True,
            )
        return SemanticCloud(self.points[idx], desc, self.space)

    def centroid(self) -> np.ndarray:
        self.require_nonempty("centroid")
        return self.points.mean(axis=0)

    def extents(self) -> np.ndarray:
        """Tight axis-aligned bounding-box extents."""
        self.require_nonempty("extents")
        return self.points.max(axis=0) - self.points.min(axis=0)


def check_rotation(rotation: np.ndarray, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    rot = np.asarray(rotation, dtype=np.float64)
    if rot.shape != (3, 3):
        raise ValueError(f"rotation must be (3, 3), got {rot.shape}")
    if not np.all(np.isfinite(rot)):
        raise ValueError("rotation contains non-finite values")
    err = np.abs(rot @ rot.T - np.eye(3)).max()
    if err > tol:
        raise ValueError(f"rotation is not orthonormal (max deviation {err:.3e})")
    if np.linalg.det(rot) < 0:
        raise ValueError("rotation has negative determinant (reflection)")
    return rot


@dataclass
class SimilarityTransform:
    """y = scale * rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = check_rotation(self.rotation)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation contains non-finite values")
        self.scale = float(self.scale)
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * (pts @ self.rotation.T) + self.translation

    def inverse(self) -> "SimilarityTransform":
        rot_inv = self.rotation.T
        return SimilarityTransform(
            rot_inv, -(rot_inv @ self.translation) / self.scale, 1.0 / self.scale
        )

    def compose(self, inner: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``inner`` first, then ``self``."""
        return SimilarityTransform(
            self.rotation @ inner.rotation,
            self.scale * (self.rotation @ inner.translation) + self.translation,
            self.scale * inner.scale,
        )


@dataclass
class Pose:
    """9-DoF pose: rotation, translation and metric oriented-bbox extents."""

    rotation: np.ndarray
    translation: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        self.rotation = check_rotation(self.rotation)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation contains non-finite values")
        if not (np.all(np.isfinite(self.size)) and np.all(self.size > 0)):
            raise ValueError("size components must be finite and > 0")

    @property
    def scale(self) -> float:
        """Uniform normalized->camera scale (norm of the metric extents)."""
        return float(np.linalg.norm(self.size))

    def to_similarity(self) -> SimilarityTransform:
        return SimilarityTransform(self.rotation, self.translation, self.scale)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map normalized-frame points into the camera frame."""
        return self.to_similarity().apply(points)

    def to_normalized(self, points: np.ndarray) -> np.ndarray:
        """Map camera-frame points into the normalized frame."""
        return self.to_similarity().inverse().apply(points)

    @staticmethod
    def from_similarity(transform: SimilarityTransform, model_extents) -> "Pose":
        """Build a pose from a solved normalized->camera similarity.

        ``model_extents`` are the tight bbox extents of the normalized-frame
        model the transform was solved against; metric size is their image
        under the uniform scale.
        """
        ext = np.asarray(model_extents, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(ext)) and np.all(ext > 0)):
            raise ValueError("model extents must be finite and > 0")
        return Pose(transform.rotation, transform.translation, transform.scale * ext)
