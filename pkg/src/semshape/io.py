"""ASCII PLY point files and the binary ``.feat`` descriptor sidecar.

PLY files carry ``element vertex N`` with float ``x y z`` properties (32-bit
values, written in shortest round-trip decimal form) and optionally
``uchar red green blue`` for visualization output.

``.feat`` layout: magic ``SFC1``, then little-endian u32 N, u32 C, then
N*C float32 values row-major, matching the paired PLY's point order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .cloud import SemanticCloud, Space
from .errors import FormatError

FEAT_MAGIC = b"SFC1"


def _fmt_f32(value: float) -> str:
    """Shortest decimal that reparses to the same float32."""
    return repr(float(np.float32(value)))


def write_ply(path, points, colors=None) -> None:
    """Write points (cast to float32) as ASCII PLY; ``colors`` is an optional
    (N, 3) uint8 array adding red/green/blue properties."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must be (N, 3), got {pts.shape}")
    header = ["ply", "format ascii 1.0", f"element vertex {pts.shape[0]}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape != pts.shape:
            raise ValueError(f"colors must match points shape, got {colors.shape}")
        colors = colors.astype(np.uint8)
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    lines = header
    if colors is None:
        for row in pts:
            lines.append(f"{_fmt_f32(row[0])} {_fmt_f32(row[1])} {_fmt_f32(row[2])}")
    else:
        for row, col in zip(pts, colors):
            lines.append(
                f"{_fmt_f32(row[0])} {_fmt_f32(row[1])} {_fmt_f32(row[2])} "
                f"{col[0]} {col[1]} {col[2]}"
            )
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> np.ndarray:
    """Read an ASCII PLY written by :func:`write_ply` (color columns, if any,
    are ignored). Raises :class:`FormatError` with a line number on damage."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError(f"{path}: missing 'ply' magic (line 1)")
    count = None
    body_at = None
    for i, line in enumerate(lines[1:], start=2):
        token = line.strip()
        if token.startswith("element vertex"):
            parts = token.split()
            try:
                count = int(parts[2])
            except (IndexError, ValueError):
                raise FormatError(f"{path}: bad element line (line {i})") from None
        elif token == "end_header":
            body_at = i
            break
    if count is None or body_at is None:
        raise FormatError(f"{path}: header missing vertex element or end_header")
    rows = [ln for ln in lines[body_at:] if ln.strip()]
    if len(rows) != count:
        raise FormatError(
            f"{path}: header promises {count} vertices but body has {len(rows)} "
            f"(line {body_at + 1})"
        )
    out = np.empty((count, 3), dtype=np.float64)
    for r, line in enumerate(rows):
        parts = line.split()
        if len(parts) < 3:
            raise FormatError(f"{path}: vertex row too short (line {body_at + 1 + r})")
        try:
            out[r] = [float(parts[0]), float(parts[1]), float(parts[2])]
        except ValueError:
            raise FormatError(f"{path}: non-numeric vertex (line {body_at + 1 + r})") from None
    return out


def write_feat(path, descriptors) -> None:
    desc = np.ascontiguousarray(descriptors, dtype="<f4")
    if desc.ndim != 2:
        raise ValueError(f"descriptors must be (N, C), got {desc.shape}")
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<II", desc.shape[0], desc.shape[1]))
        fh.write(desc.tobytes())


def read_feat(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header", offset=len(blob))
    if blob[:4] != FEAT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}", offset=0)
    n, c = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * n * c
    if len(blob) != expected:
        raise FormatError(
            f"{path}: expected {expected} bytes for {n}x{c} values, got {len(blob)}",
            offset=min(len(blob), expected),
        )
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(n, c).astype(np.float32)


def feat_path_for(ply_path) -> Path:
    return Path(ply_path).with_suffix(".feat")


def save_cloud(ply_path, cloud: SemanticCloud) -> None:
    """Write a cloud as PLY plus a ``.feat`` sidecar when descriptors exist.
    Values are quantized to float32 (the on-disk precision)."""
    write_ply(ply_path, cloud.points)
    if cloud.descriptors is not None:
        write_feat(feat_path_for(ply_path), cloud.descriptors)


def load_cloud(ply_path, space: Space = Space.NOCS) -> SemanticCloud:
    """Read a PLY and, if present, its ``.feat`` sidecar."""
    points = read_ply(ply_path)
    side = feat_path_for(ply_path)
    descriptors = None
    if side.exists():
        descriptors = read_feat(side)
        if descriptors.shape[0] != points.shape[0]:
            raise FormatError(
                f"{side}: {descriptors.shape[0]} descriptor rows for "
                f"{points.shape[0]} points"
            )
    return SemanticCloud(points, descriptors, space)
