"""Whitespace-separated XYZ point files (optionally with normals)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .stl import read_stl
from .types import GeometryError, PointCloud


def read_xyz(path) -> PointCloud:
    """Read ``x y z [nx ny nz]`` rows; ``#`` starts a comment."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) not in (3, 6):
            raise GeometryError(f"{path}:{lineno}: expected 3 or 6 columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise GeometryError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        return PointCloud(np.zeros((0, 3)))
    if len({len(r) for r in rows}) != 1:
        raise GeometryError(f"{path}: mixed 3- and 6-column rows")
    arr = np.array(rows)
    if arr.shape[1] == 6:
        return PointCloud(arr[:, :3], arr[:, 3:])
    return PointCloud(arr)


def write_xyz(cloud: PointCloud, path, precision: int = 6) -> None:
    arr = cloud.points if cloud.normals is None else np.hstack([cloud.points, cloud.normals])
    fmt = f"%.{precision}f"
    with open(path, "w", newline="\n") as fh:
        np.savetxt(fh, arr, fmt=fmt, delimiter=" ")


def load_cloud(path) -> PointCloud:
    """Point cloud from an XYZ text file or from the vertices of an STL."""
    path = Path(path)
    if path.suffix.lower() == ".stl":
        return PointCloud(read_stl(path).vertices)
    return read_xyz(path)
