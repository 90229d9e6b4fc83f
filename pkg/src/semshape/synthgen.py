"""Synthetic category and scene generation for benchmarking.

Each family is a parametric surface with named generative modes (sampled per
instance from configurable intervals), surface-area-uniform sampling, and a
per-point part label.  Instances come out in the normalized frame (centroid
at the origin, tight bbox diagonal exactly 1) with 16-dim procedural
descriptors: 8 part-label channels box-blurred over the 16 nearest neighbors
plus 8 smooth coordinate harmonics, so descriptors encode normalized-frame
position the way distilled visual features encode object-relative location.

Scene rendering poses an instance into camera space, removes hidden points
with a normal-facing heuristic (outward direction approximated from the
centroid) cut at the requested cull fraction, adds isotropic Gaussian noise,
and appends uniform box outliers carrying random descriptors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .cloud import Pose, SemanticCloud, Space, Symmetry
from .errors import TooSparseError
from .geometry import knn

DESCRIPTOR_DIM = 16
_PART_CHANNELS = 8
_BLUR_K = 16
_MIN_SURVIVORS = 32
# planted outliers must be genuine: resample draws closer than this
# (normalized units) to the instance surface
_OUTLIER_CLEARANCE = 0.12


class Family(Enum):
    BOX = "box"
    CYLINDER = "cylinder"
    BOTTLE = "bottle"
    MUG = "mug"


_DEFAULT_MODES = {
    Family.BOX: {"length": (0.75, 1.25), "height": (0.75, 1.25)},
    Family.CYLINDER: {"radius": (0.8, 1.2), "height": (0.8, 1.2)},
    Family.BOTTLE: {"height": (0.85, 1.15), "neck": (0.7, 1.3)},
    Family.MUG: {"radius": (0.85, 1.15), "height": (0.85, 1.15)},
}

_DEFAULT_SYMMETRY = {
    Family.BOX: Symmetry.NONE,
    Family.CYLINDER: Symmetry.AXIAL_Z,
    Family.BOTTLE: Symmetry.AXIAL_Z,
    Family.MUG: Symmetry.NONE,
}


@dataclass
class CategorySpec:
    family: Family
    instance_count: int
    points_per_instance: int = 2048
    mode_ranges: dict[str, tuple[float, float]] | None = None
    symmetry: Symmetry | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.family, str):
            self.family = Family(self.family.lower())
        if self.instance_count < 2:
            raise ValueError("instance_count must be >= 2")
        if self.points_per_instance < _BLUR_K:
            raise ValueError(f"points_per_instance must be >= {_BLUR_K}")
        if self.mode_ranges is None:
            self.mode_ranges = dict(_DEFAULT_MODES[self.family])
        for name, (lo, hi) in self.mode_ranges.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and 0 < lo <= hi):
                raise ValueError(f"mode {name!r} has bad range ({lo}, {hi})")
        if self.symmetry is None:
            self.symmetry = _DEFAULT_SYMMETRY[self.family]
        elif isinstance(self.symmetry, str):
            self.symmetry = Symmetry(self.symmetry.lower())


@dataclass
class SceneSpec:
    gt_pose: Pose
    cull_fraction: float = 0.5
    noise_sigma: float = 0.0
    outlier_count: int = 0
    view_direction: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cull_fraction <= 0.8:
            raise ValueError(f"cull_fraction must be in [0, 0.8], got {self.cull_fraction}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.outlier_count < 0:
            raise ValueError("outlier_count must be >= 0")
        if self.view_direction is not None:
            v = np.asarray(self.view_direction, dtype=np.float64).reshape(3)
            norm = np.linalg.norm(v)
            if not norm > 0:
                raise ValueError("view_direction must be non-zero")
            self.view_direction = v / norm


@dataclass
class CategoryDataset:
    spec: CategorySpec
    instances: list[SemanticCloud]
    instance_ids: list[str]
    mode_values: np.ndarray  # (instances, modes) in sorted mode-name order
    mode_names: list[str] = field(default_factory=list)

    @property
    def symmetry(self) -> Symmetry:
        return self.spec.symmetry


@dataclass
class RenderedScene:
    cloud: SemanticCloud  # camera frame, descriptors carried
    outlier_ids: np.ndarray
    view_direction: np.ndarray
    spec: SceneSpec


# -------------------------------------------------------------------------
# Surface builders: (points, part_labels, component areas handled inside)
# -------------------------------------------------------------------------


def _allocate(areas: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` samples over components."""
    weights = areas / areas.sum()
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _disk(rng, n, radius, z, inner=0.0):
    r = np.sqrt(rng.uniform((inner / max(radius, 1e-12)) ** 2, 1.0, n)) * radius
    ang = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.c_[r * np.cos(ang), r * np.sin(ang), np.full(n, z)]


def _tube(rng, n, radius, z0, z1):
    ang = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(z0, z1, n)
    return np.c_[radius * np.cos(ang), radius * np.sin(ang), z]


def _box_surface(rng, n, dims):
    a, b, c = dims
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    counts = _allocate(areas, n)
    pts, labels = [], []
    for face, m in enumerate(counts):
        if m == 0:
            continue
        u = rng.uniform(-0.5, 0.5, (m, 2))
        if face == 0:
            p = np.c_[np.full(m, -0.5 * a), u[:, 0] * b, u[:, 1] * c]
        elif face == 1:
            p = np.c_[np.full(m, 0.5 * a), u[:, 0] * b, u[:, 1] * c]
        elif face == 2:
            p = np.c_[u[:, 0] * a, np.full(m, -0.5 * b), u[:, 1] * c]
        elif face == 3:
            p = np.c_[u[:, 0] * a, np.full(m, 0.5 * b), u[:, 1] * c]
        elif face == 4:
            p = np.c_[u[:, 0] * a, u[:, 1] * b, np.full(m, -0.5 * c)]
        else:
            p = np.c_[u[:, 0] * a, u[:, 1] * b, np.full(m, 0.5 * c)]
        pts.append(p)
        labels.append(np.full(m, face))
    return np.concatenate(pts), np.concatenate(labels)


def _cylinder_surface(rng, n, radius, height):
    areas = np.array([2 * np.pi * radius * height, np.pi * radius**2, np.pi * radius**2])
    counts = _allocate(areas, n)
    pts = [_tube(rng, counts[0], radius, 0.0, height),
           _disk(rng, counts[1], radius, height),
           _disk(rng, counts[2], radius, 0.0)]
    labels = [np.full(counts[0], 0), np.full(counts[1], 1), np.full(counts[2], 2)]
    return np.concatenate(pts), np.concatenate(labels)


def _bottle_surface(rng, n, body_r, body_h, neck_r, neck_h):
    areas = np.array([
        2 * np.pi * body_r * body_h,            # body side
        np.pi * body_r**2,                      # bottom
        np.pi * (body_r**2 - neck_r**2),        # shoulder annulus
        2 * np.pi * neck_r * neck_h,            # neck side
        np.pi * neck_r**2,                      # top cap
    ])
    counts = _allocate(areas, n)
    pts = [
        _tube(rng, counts[0], body_r, 0.0, body_h),
        _disk(rng, counts[1], body_r, 0.0),
        _disk(rng, counts[2], body_r, body_h, inner=neck_r),
        _tube(rng, counts[3], neck_r, body_h, body_h + neck_h),
        _disk(rng, counts[4], neck_r, body_h + neck_h),
    ]
    labels = [np.full(counts[k], k) for k in range(5)]
    return np.concatenate(pts), np.concatenate(labels)


def _mug_surface(rng, n, radius, height):
    loop_r = 0.30 * height
    tube_r = 0.13 * radius
    areas = np.array([
        2 * np.pi * radius * height,   # side
        np.pi * radius**2,             # bottom
        np.pi * radius**2,             # top
        2 * np.pi**2 * loop_r * tube_r,  # outer half torus
    ])
    counts = _allocate(areas, n)
    pts = [_tube(rng, counts[0], radius, 0.0, height),
           _disk(rng, counts[1], radius, 0.0),
           _disk(rng, counts[2], radius, height)]
    m = counts[3]
    # outer half-torus handle in the x-z plane, hinged at the body wall
    phi = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, m)
    theta = np.empty(m)
    filled = 0
    while filled < m:  # minor-angle density is proportional to loop_r + tube_r*cos
        cand = rng.uniform(0.0, 2.0 * np.pi, m - filled)
        accept = rng.uniform(0.0, 1.0, m - filled) < (
            (loop_r + tube_r * np.cos(cand)) / (loop_r + tube_r)
        )
        good = cand[accept]
        theta[filled : filled + good.size] = good
        filled += good.size
    ring = np.c_[np.cos(phi), np.zeros(m), np.sin(phi)]
    center = np.array([radius, 0.0, 0.5 * height]) + loop_r * ring
    normal_dir = ring * np.cos(theta)[:, None]
    normal_dir[:, 1] = np.sin(theta)
    handle = center + tube_r * normal_dir
    pts.append(handle)
    labels = [np.full(counts[k], k) for k in range(4)]
    return np.concatenate(pts), np.concatenate(labels)


def _build_surface(rng, spec: CategorySpec, modes: dict[str, float]):
    fam = spec.family
    n = spec.points_per_instance
    if fam is Family.BOX:
        dims = (0.30 * modes.get("length", 1.0),
                0.24 * modes.get("width", 1.0),
                0.36 * modes.get("height", 1.0))
        return _box_surface(rng, n, dims)
    if fam is Family.CYLINDER:
        return _cylinder_surface(rng, n, 0.14 * modes.get("radius", 1.0),
                                 0.42 * modes.get("height", 1.0))
    if fam is Family.BOTTLE:
        return _bottle_surface(
            rng, n,
            0.13 * modes.get("radius", 1.0),
            0.34 * modes.get("height", 1.0),
            0.045 * modes.get("radius", 1.0),
            0.12 * modes.get("neck", 1.0),
        )
    if fam is Family.MUG:
        return _mug_surface(rng, n, 0.15 * modes.get("radius", 1.0),
                            0.30 * modes.get("height", 1.0))
    raise ValueError(f"unknown family {fam}")


# -------------------------------------------------------------------------
# Normalization and descriptors
# -------------------------------------------------------------------------


def normalize_points(points: np.ndarray) -> np.ndarray:
    """Center on the centroid and scale so the tight bbox diagonal is 1."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts - pts.mean(axis=0)
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diag <= 0:
        raise ValueError("degenerate cloud: zero bounding-box diagonal")
    return pts / diag


def procedural_descriptors(points: np.ndarray, part_labels: np.ndarray) -> np.ndarray:
    """16-dim descriptors: blurred part one-hots + coordinate harmonics."""
    pts = np.asarray(points, dtype=np.float64)
    labels = np.asarray(part_labels, dtype=np.int64)
    n = pts.shape[0]
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= _PART_CHANNELS:
        raise ValueError(f"part labels must be (N,) in [0, {_PART_CHANNELS})")
    onehot = np.zeros((n, _PART_CHANNELS))
    onehot[np.arange(n), labels] = 1.0
    k = min(_BLUR_K, n)
    neighbor_idx = knn(pts, SemanticCloud(pts), k)
    blurred = onehot[neighbor_idx].mean(axis=1)

    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    w1, w2 = np.pi, 2.0 * np.pi
    harmonics = np.stack(
        [np.sin(w1 * x), np.sin(w1 * y), np.sin(w1 * z), np.cos(w1 * (x + y + z)),
         np.sin(w2 * x), np.sin(w2 * y), np.sin(w2 * z), np.cos(w2 * (x + y + z))],
        axis=1,
    )
    return np.concatenate([blurred, harmonics], axis=1).astype(np.float32)


def generate_category(spec: CategorySpec) -> CategoryDataset:
    """Sample ``instance_count`` normalized instances with descriptors.

    Mode values for each instance are drawn uniformly from their ranges (in
    sorted mode-name order, so the draw stream is independent of dict
    ordering). Fully determined by ``spec.seed``.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    names = sorted(spec.mode_ranges)
    instances, ids = [], []
    mode_values = np.zeros((spec.instance_count, len(names)))
    for i in range(spec.instance_count):
        draws = {name: rng.uniform(*spec.mode_ranges[name]) for name in names}
        mode_values[i] = [draws[name] for name in names]
        pts, labels = _build_surface(rng, spec, draws)
        pts = normalize_points(pts)
        desc = procedural_descriptors(pts, labels)
        instances.append(SemanticCloud(pts, desc, Space.NOCS))
        ids.append(f"{spec.family.value}_{i:03d}")
    return CategoryDataset(spec, instances, ids, mode_values, names)


# -------------------------------------------------------------------------
# Scene rendering
# -------------------------------------------------------------------------


def random_pose(rng, instance: SemanticCloud, scale_range=(0.22, 0.4),
                translation_range: float = 0.5) -> Pose:
    """Uniform random rotation, uniform scalar scale, uniform translation.
    ``size`` is the instance's normalized extents under that scale."""
    u1, u2, u3 = rng.uniform(0.0, 1.0, 3)
    q = np.array([
        np.sqrt(1 - u1) * np.sin(2 * np.pi * u2),
        np.sqrt(1 - u1) * np.cos(2 * np.pi * u2),
        np.sqrt(u1) * np.sin(2 * np.pi * u3),
        np.sqrt(u1) * np.cos(2 * np.pi * u3),
    ])
    x, y, z, w = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    scale = rng.uniform(*scale_range)
    translation = rng.uniform(-translation_range, translation_range, 3)
    ext = instance.extents()
    size = scale * ext / np.linalg.norm(ext)  # normalized diag is 1 by construction
    return Pose(rot, translation, size)


def render_partial(instance: SemanticCloud, scene: SceneSpec) -> RenderedScene:
    """Pose, cull, perturb and contaminate one instance into a camera-frame
    observation. See the module docstring for the visibility heuristic."""
    instance.require_nonempty("render_partial")
    if instance.space is not Space.NOCS:
        raise ValueError("render_partial expects a normalized-frame instance")
    rng = np.random.Generator(np.random.PCG64(scene.seed))
    if scene.view_direction is None:
        v = rng.normal(size=3)
        view = v / np.linalg.norm(v)
    else:
        view = scene.view_direction

    posed = scene.gt_pose.to_camera(instance.points)
    n = posed.shape[0]
    keep_count = int(round((1.0 - scene.cull_fraction) * n))
    if keep_count < _MIN_SURVIVORS:
        raise TooSparseError(
            f"cull_fraction {scene.cull_fraction} leaves {keep_count} points "
            f"(< {_MIN_SURVIVORS})"
        )
    if keep_count < n:
        outward = posed - posed.mean(axis=0)
        norms = np.linalg.norm(outward, axis=1)
        norms[norms == 0] = 1.0
        facing = (outward / norms[:, None]) @ view
        order = np.argsort(-facing, kind="stable")
        keep = np.sort(order[:keep_count])  # original order preserved
    else:
        keep = np.arange(n)

    pts = posed[keep].copy()
    desc = instance.descriptors[keep].copy() if instance.descriptors is not None else None
    if scene.noise_sigma > 0:
        pts += rng.normal(0.0, scene.noise_sigma, pts.shape)

    outlier_ids = np.arange(len(pts), len(pts) + scene.outlier_count, dtype=np.int64)
    if scene.outlier_count > 0:
        lo, hi = posed.min(axis=0), posed.max(axis=0)
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        clearance = _OUTLIER_CLEARANCE * scene.gt_pose.scale
        out_pts = np.empty((scene.outlier_count, 3))
        for k in range(scene.outlier_count):
            best, best_d = None, -1.0
            for _ in range(64):
                cand = center + rng.uniform(-1.0, 1.0, 3) * (2.0 * half)
                d = float(np.sqrt(((posed - cand) ** 2).sum(axis=1).min()))
                if d >= clearance:
                    best = cand
                    break
                if d > best_d:
                    best, best_d = cand, d
            out_pts[k] = best
        pts = np.concatenate([pts, out_pts])
        if desc is not None:
            junk = rng.normal(size=(scene.outlier_count, desc.shape[1])).astype(desc.dtype)
            desc = np.concatenate([desc, junk])

    cloud = SemanticCloud(pts, desc, Space.CAMERA)
    return RenderedScene(cloud, outlier_ids, view, scene)
