"""Pose and reconstruction metrics plus CSV/JSON/SVG report emission.

Conventions: rotation error is the geodesic angle in degrees, minimized over
the symmetry group when the category has one; translation error is a camera
frame L2 in meters; thresholds pair degrees with centimeters. Accuracy
percentages are macro-averaged: per category first, then across categories.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .cloud import Pose, SemanticCloud, Space, Symmetry
from .io import write_ply

METRIC_THRESHOLDS = ((5, 2), (5, 5), (10, 2), (10, 5))  # (degrees, centimeters)
IOU_THRESHOLDS = (0.5, 0.75)
_PLANE_EPS = 1e-9
_SMOOTH_L1_DELTA = 1.0


# -------------------------------------------------------------------------
# Per-pair errors
# -------------------------------------------------------------------------


def _rotation_angle_deg(m) -> float:
    # atan2(sin, cos) keeps full precision near 0 where acos(trace) degrades
    axial = (m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1])
    sin_t = 0.5 * math.hypot(*axial)
    cos_t = (float(np.trace(m)) - 1.0) / 2.0
    return math.degrees(math.atan2(sin_t, cos_t))


def pose_error(pred: Pose, gt: Pose, symmetry: Symmetry = Symmetry.NONE):
    """Geodesic rotation error (degrees) and translation L2 (meters).

    For ``Symmetry.AXIAL_Z`` the rotation error is the minimum over all spins
    about the object's z axis. With Q = R_gt^T R_pred the trace of Q Rz(phi)
    is maximized (angle minimized) at phi = atan2(Q12 - Q21, Q11 + Q22).
    """
    q = gt.rotation.T @ pred.rotation
    if symmetry is Symmetry.AXIAL_Z:
        phi = math.atan2(q[0, 1] - q[1, 0], q[0, 0] + q[1, 1])
        c, s = math.cos(phi), math.sin(phi)
        q = q @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    rot_deg = _rotation_angle_deg(q)
    trans_m = float(np.linalg.norm(pred.translation - gt.translation))
    return rot_deg, trans_m


def ndeg_mcm_map(errors, thresholds=METRIC_THRESHOLDS):
    """Percentage of (rot_deg, trans_m) pairs within each (n deg, m cm) gate.

    Both comparisons are inclusive; centimeters convert to meters before the
    translation check. Raises ValueError on an empty error list.
    """
    arr = np.asarray(list(errors), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("ndeg_mcm_map needs at least one error pair")
    arr = arr.reshape(-1, 2)
    out = []
    for n_deg, m_cm in thresholds:
        ok = (arr[:, 0] <= n_deg) & (arr[:, 1] <= m_cm * 0.01)
        out.append(float(ok.mean() * 100.0))
    return out


# -------------------------------------------------------------------------
# Oriented-box IoU
# -------------------------------------------------------------------------


def _box_halfspaces(pose: Pose):
    """Rows (normal, offset) with normal . x <= offset inside the box."""
    normals = np.vstack([pose.rotation.T, -pose.rotation.T])
    half = np.tile(pose.size / 2.0, 2)
    offsets = half + normals @ pose.translation
    return normals, offsets


def _intersection_volume_exact(a: Pose, b: Pose) -> float:
    """Volume of the intersection polytope via plane-triple vertex enumeration."""
    na, oa = _box_halfspaces(a)
    nb, ob = _box_halfspaces(b)
    normals = np.vstack([na, nb])
    offsets = np.concatenate([oa, ob])
    scale = max(float(np.max(a.size)), float(np.max(b.size)), 1.0)
    eps = _PLANE_EPS * scale
    verts = []
    n_planes = len(offsets)
    for i in range(n_planes):
        for j in range(i + 1, n_planes):
            for k in range(j + 1, n_planes):
                mat = normals[[i, j, k]]
                if abs(np.linalg.det(mat)) < 1e-12:
                    continue
                point = np.linalg.solve(mat, offsets[[i, j, k]])
                if np.all(normals @ point <= offsets + eps):
                    verts.append(point)
    if len(verts) < 4:
        return 0.0
    try:
        return float(ConvexHull(np.asarray(verts)).volume)
    except QhullError:  # flat or needle-like intersection
        return 0.0


def _intersection_volume_voxel(a: Pose, b: Pose, resolution: int) -> float:
    """Voxelize box ``a`` and count cell centers landing inside box ``b``.

    A cell center (x_i, y_j, z_k) of box ``a`` sits inside box ``b`` iff
    |p(i,j) + z_k q| <= size_b / 2 componentwise, which is an interval in z_k
    per (i, j) column; counting grid hits in that interval keeps the cost at
    resolution^2 instead of resolution^3 while counting the same cells a
    brute-force pass over every center would.
    """
    m = a.rotation.T @ b.rotation
    base = (a.translation - b.translation) @ b.rotation
    centers = (np.arange(resolution) + 0.5) / resolution - 0.5
    cx = np.multiply.outer(centers * a.size[0], m[0])
    cy = np.multiply.outer(centers * a.size[1], m[1])
    q = a.size[2] * m[2]
    p = (cx[:, None, :] + cy[None, :, :] + base).reshape(-1, 3)
    half_b = b.size / 2.0
    lo = np.full(p.shape[0], -np.inf)
    hi = np.full(p.shape[0], np.inf)
    feasible = np.ones(p.shape[0], dtype=bool)
    for c in range(3):
        if abs(q[c]) < 1e-300:  # column parallel to this face pair
            feasible &= np.abs(p[:, c]) <= half_b[c]
            continue
        a1 = (-half_b[c] - p[:, c]) / q[c]
        a2 = (half_b[c] - p[:, c]) / q[c]
        lo = np.maximum(lo, np.minimum(a1, a2))
        hi = np.minimum(hi, np.maximum(a1, a2))
    # z grid index range inside [lo, hi]; one-sided clamps keep empties empty
    kmin = np.maximum(np.ceil((lo + 0.5) * resolution - 0.5), 0.0)
    kmax = np.minimum(np.floor((hi + 0.5) * resolution - 0.5), resolution - 1.0)
    counts = np.where(feasible, np.maximum(kmax - kmin + 1.0, 0.0), 0.0)
    cell_volume = float(np.prod(a.size)) / resolution**3
    return float(counts.sum()) * cell_volume


def iou3d(pred: Pose, gt: Pose, thresholds=IOU_THRESHOLDS, method: str = "exact",
          resolution: int = 128):
    """Oriented-box IoU of the two poses' (rotation, translation, size) boxes.

    ``method='exact'`` intersects the half-space systems and measures the hull
    volume; ``method='voxel'`` rasterizes the predicted box at ``resolution``
    cells per axis (error bounded by cell granularity, about 1% at 128).
    Returns ``(iou, flags)`` with one pass flag per threshold.
    """
    vol_a = float(np.prod(pred.size))
    vol_b = float(np.prod(gt.size))
    if vol_a <= 0 or vol_b <= 0:
        raise ValueError("degenerate box: every size component must be positive")
    if method == "exact":
        inter = _intersection_volume_exact(pred, gt)
    elif method == "voxel":
        inter = _intersection_volume_voxel(pred, gt, resolution)
    else:
        raise ValueError(f"unknown iou3d method {method!r}")
    inter = min(inter, vol_a, vol_b)  # clamp fp overshoot
    union = vol_a + vol_b - inter
    iou = inter / union
    return iou, tuple(iou >= t for t in thresholds)


# -------------------------------------------------------------------------
# Keypoint NOCS error
# -------------------------------------------------------------------------


def _smooth_l1(x: np.ndarray, delta: float = _SMOOTH_L1_DELTA) -> np.ndarray:
    quad = 0.5 * x * x / delta
    lin = np.abs(x) - 0.5 * delta
    return np.where(np.abs(x) < delta, quad, lin)


def nocs_error_map(pred_nocs: SemanticCloud, keypoints: SemanticCloud, gt: Pose,
                   ply_path=None):
    """Per-keypoint distance between predicted and ground-truth normalized
    coordinates, where ground truth comes from pushing the observed keypoints
    through the inverse ground-truth pose.

    Returns ``(per_point, summary)`` with summary keys ``rms`` and
    ``smooth_l1`` (delta=1). ``ply_path`` writes a colored cloud at the
    keypoint locations, red for the largest error, green for zero.
    """
    if len(pred_nocs) != len(keypoints):
        raise ValueError(
            f"count mismatch: {len(pred_nocs)} predictions vs {len(keypoints)} keypoints"
        )
    if pred_nocs.space is not Space.NOCS:
        raise ValueError("pred_nocs must be in the normalized frame")
    pred_nocs.require_nonempty("nocs_error_map")
    gt_nocs = gt.to_normalized(keypoints.points)
    per_point = np.linalg.norm(pred_nocs.points - gt_nocs, axis=1)
    summary = {
        "rms": float(np.sqrt(np.mean(per_point**2))),
        "smooth_l1": float(_smooth_l1(per_point).mean()),
    }
    if ply_path is not None:
        top = float(per_point.max())
        t = per_point / top if top > 0 else np.zeros_like(per_point)
        colors = np.stack(
            [np.round(255 * t), np.round(255 * (1.0 - t)), np.zeros_like(t)], axis=1
        ).astype(np.uint8)
        write_ply(ply_path, keypoints.points, colors)
    return per_point, summary


# -------------------------------------------------------------------------
# Tables and reports
# -------------------------------------------------------------------------


def recon_table(per_category_cd: dict, csv_path=None):
    """Per-category mean reconstruction CD in 1e-3 units plus an Average row.

    ``per_category_cd`` maps category name to a list of raw CD values; the
    Average row is the mean of the category means. Optionally emits CSV.
    """
    if not per_category_cd:
        raise ValueError("recon_table needs at least one category")
    rows = []
    for name in per_category_cd:
        values = np.asarray(per_category_cd[name], dtype=np.float64)
        if values.size == 0:
            raise ValueError(f"category {name!r} has no CD values")
        rows.append((str(name), float(values.mean() * 1e3)))
    rows.append(("Average", float(np.mean([v for _, v in rows]))))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["category", "cd_x1e3"])
            for name, value in rows:
                writer.writerow([name, repr(value)])
    return rows


@dataclass
class SceneRecord:
    """One evaluated scene: predicted vs ground-truth pose plus extras."""

    category: str
    pred: Pose
    gt: Pose
    symmetry: Symmetry = Symmetry.NONE
    recon_cd: float | None = None
    nocs_rms: float | None = None


_MAP_KEYS = tuple(f"map_{n}deg{m}cm" for n, m in METRIC_THRESHOLDS)
_IOU_KEYS = tuple(f"iou{int(t * 100)}" for t in IOU_THRESHOLDS)


@dataclass
class MetricReport:
    per_category: dict = field(default_factory=dict)   # name -> metric dict
    mean: dict = field(default_factory=dict)

    def row(self, category: str) -> dict:
        return self.per_category[category]


def build_report(records: list[SceneRecord], iou_method: str = "exact",
                 misses: dict | None = None) -> MetricReport:
    """Aggregate per-scene records into macro-averaged category metrics.

    ``misses`` counts unsolved scenes per category; they dilute every
    percentage (a scene with no prediction passes no threshold) but not the
    reconstruction and keypoint summaries, which average over successes.
    """
    if not records:
        raise ValueError("build_report needs at least one record")
    by_cat: dict[str, list[SceneRecord]] = {}
    for rec in records:
        by_cat.setdefault(rec.category, []).append(rec)

    report = MetricReport()
    for name in sorted(by_cat):
        recs = by_cat[name]
        total = len(recs) + (misses.get(name, 0) if misses else 0)
        dilute = len(recs) / total
        errors = [pose_error(r.pred, r.gt, r.symmetry) for r in recs]
        percentages = ndeg_mcm_map(errors)
        ious = np.array([iou3d(r.pred, r.gt, method=iou_method)[0] for r in recs])
        row = {k: v * dilute for k, v in zip(_MAP_KEYS, percentages)}
        for key, thresh in zip(_IOU_KEYS, IOU_THRESHOLDS):
            row[key] = float((ious >= thresh).mean() * 100.0) * dilute
        cds = [r.recon_cd for r in recs if r.recon_cd is not None]
        row["recon_cd"] = float(np.mean(cds) * 1e3) if cds else float("nan")
        rms = [r.nocs_rms for r in recs if r.nocs_rms is not None]
        row["nocs_rms"] = float(np.mean(rms)) if rms else float("nan")
        report.per_category[name] = row

    keys = next(iter(report.per_category.values())).keys()
    report.mean = {
        k: float(np.mean([report.per_category[c][k] for c in report.per_category]))
        for k in keys
    }
    return report


_CSV_COLUMNS = list(_MAP_KEYS) + list(_IOU_KEYS) + ["recon_cd", "nocs_rms"]


def write_report_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category"] + _CSV_COLUMNS)
        for name in sorted(report.per_category):
            row = report.per_category[name]
            writer.writerow([name] + [repr(row[c]) for c in _CSV_COLUMNS])
        writer.writerow(["mean"] + [repr(report.mean[c]) for c in _CSV_COLUMNS])


def write_report_json(report: MetricReport, path, provenance: dict | None = None) -> None:
    doc = {"per_category": report.per_category, "mean": report.mean}
    if provenance:
        doc["provenance"] = provenance
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_metric_svg(report: MetricReport, metric: str, path) -> None:
    """Primitive bar chart of one metric across categories."""
    names = sorted(report.per_category)
    values = [report.per_category[n][metric] for n in names]
    if not values:
        raise ValueError("report has no categories")
    top = max(max(values), 1e-12)
    bar_w, gap, height, base = 48, 16, 160, 180
    width = gap + len(names) * (bar_w + gap)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{base + 40}">',
        f'<text x="{gap}" y="14" font-size="12" font-family="monospace">{metric}</text>',
    ]
    for i, (name, value) in enumerate(zip(names, values)):
        h = 0.0 if top <= 0 else max(0.0, value / top) * height
        x = gap + i * (bar_w + gap)
        parts.append(
            f'<rect x="{x}" y="{base - h:.1f}" width="{bar_w}" height="{h:.1f}" fill="#4878a8"/>'
        )
        parts.append(
            f'<text x="{x}" y="{base + 14}" font-size="10" font-family="monospace">{name[:8]}</text>'
        )
        parts.append(
            f'<text x="{x}" y="{base - h - 4:.1f}" font-size="10" font-family="monospace">{value:.1f}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
