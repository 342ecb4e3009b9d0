"""Resampling of scattered signed distances onto regular grids on the prism faces.

Nodes sit at cell centres with the grid origin at the face's minimum corner
in its ``(u, v)`` coordinates: ``+-x`` faces use ``(y, z)``, ``+-y`` faces use
``(x, z)`` and ``+-z`` faces use ``(x, y)``. A face length that is not a
multiple of the spacing ends in a truncated cell whose node sits at that
cell's own centre. Missing values are NaN.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .deviation import FACES, DeviationField, FaceLabel
from .geometry import ReferencePrism

DEFAULT_SPACING = 1.0
DEFAULT_NORMAL_FILTER_DEG = 45.0


class ProjectionError(ValueError):
    pass


def node_coordinates(length: float, spacing: float) -> np.ndarray:
    """Cell-centre node positions along one face edge of ``length`` mm."""
    if spacing <= 0:
        raise ProjectionError("grid spacing must be positive")
    n = max(1, math.ceil(length / spacing - 1e-9))
    lo = np.arange(n) * spacing
    hi = np.minimum(lo + spacing, length)
    return (lo + hi) / 2.0


@dataclass(frozen=True, eq=False)
class FaceGrid:
    face: FaceLabel
    spacing: float
    values: np.ndarray
    prism: ReferencePrism = ReferencePrism()
    source_index: Optional[np.ndarray] = None  # field point feeding each node, -1 if none

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or min(vals.shape) < 2:
            raise ProjectionError(f"face grid needs at least 2x2 nodes, got {vals.shape}")
        if self.spacing <= 0:
            raise ProjectionError("grid spacing must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "face", FaceLabel(self.face))

    @property
    def nu(self) -> int:
        return self.values.shape[0]

    @property
    def nv(self) -> int:
        return self.values.shape[1]

    @property
    def u(self) -> np.ndarray:
        return node_coordinates(self.prism.dims[self.face.uv_axes[0]], self.spacing)

    @property
    def v(self) -> np.ndarray:
        return node_coordinates(self.prism.dims[self.face.uv_axes[1]], self.spacing)

    def node_points(self) -> np.ndarray:
        """World coordinates of all nodes, shape (nu, nv, 3)."""
        return _face_nodes(self.prism, self.face, self.spacing)

    def to_csv(self, precision: int = 4) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["face", self.face.value])
        w.writerow(["nu", self.nu])
        w.writerow(["nv", self.nv])
        w.writerow(["spacing_mm", repr(float(self.spacing))])
        f = f"{{:.{precision}f}}"
        for row in self.values:
            w.writerow(["nan" if np.isnan(x) else f.format(x) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, prism: ReferencePrism = ReferencePrism()) -> "FaceGrid":
        rows = list(csv.reader(io.StringIO(text)))
        try:
            head = {r[0]: r[1] for r in rows[:4]}
            face = FaceLabel.parse(head["face"])
            nu, nv = int(head["nu"]), int(head["nv"])
            spacing = float(head["spacing_mm"])
        except (KeyError, IndexError, ValueError) as exc:
            raise ProjectionError(f"bad face-grid header: {exc}") from None
        vals = np.array([[float(x) for x in r] for r in rows[4:]], dtype=np.float64)
        if vals.shape != (nu, nv):
            raise ProjectionError(f"grid body is {vals.shape}, header says ({nu}, {nv})")
        return cls(face, spacing, vals, prism)


def _face_nodes(prism: ReferencePrism, face: FaceLabel, spacing: float) -> np.ndarray:
    ua, va = face.uv_axes
    u = node_coordinates(prism.dims[ua], spacing)
    v = node_coordinates(prism.dims[va], spacing)
    nodes = np.empty((len(u), len(v), 3))
    nodes[..., face.axis] = prism.hi[face.axis] if face.sign > 0 else prism.lo[face.axis]
    nodes[..., ua] = prism.lo[ua] + u[:, None]
    nodes[..., va] = prism.lo[va] + v[None, :]
    return nodes


def project_face(field: DeviationField, prism: ReferencePrism, face: FaceLabel,
                 spacing: float = DEFAULT_SPACING,
                 normal_filter_deg: Optional[float] = DEFAULT_NORMAL_FILTER_DEG,
                 max_gap: Optional[float] = None) -> FaceGrid:
    """Give each node on ``face`` the signed distance of its nearest field point.

    With ``normal_filter_deg`` set, candidates are limited to points labelled
    with the same face and, when the cloud carries normals, whose normal is
    within that angle of the face normal. If no candidate survives the
    filter, the full field is searched instead. Nodes farther than
    ``max_gap`` mm from every candidate stay missing.
    """
    face = FaceLabel(face)
    if len(field) == 0:
        raise ProjectionError("cannot project an empty deviation field")
    nodes = _face_nodes(prism, face, spacing)
    if min(nodes.shape[:2]) < 2:
        raise ProjectionError(f"spacing {spacing} mm leaves fewer than 2 nodes along a {face.value} edge")
    cand = np.arange(len(field))
    if normal_filter_deg is not None:
        keep = field.face_index == FACES.index(face)
        normals = field.points.normals
        if normals is not None:
            keep &= normals @ face.normal >= math.cos(math.radians(normal_filter_deg))
        if np.any(keep):
            cand = np.flatnonzero(keep)
    tree = cKDTree(field.points.points[cand])
    dist, j = tree.query(nodes.reshape(-1, 3))
    src = cand[j]
    vals = field.signed_distance[src].astype(np.float64)
    if max_gap is not None:
        far = dist > max_gap
        vals[far] = np.nan
        src = np.where(far, -1, src)
    shape = nodes.shape[:2]
    return FaceGrid(face, spacing, vals.reshape(shape), prism, src.reshape(shape))


def project_all_faces(field: DeviationField, prism: ReferencePrism, **kwargs) -> dict:
    return {face: project_face(field, prism, face, **kwargs) for face in FACES}


@dataclass(frozen=True, eq=False)
class GridStack:
    grids: tuple
    mean_map: np.ndarray
    std_map: np.ndarray

    @property
    def face(self) -> FaceLabel:
        return self.grids[0].face

    def mean_grid(self) -> FaceGrid:
        g = self.grids[0]
        return FaceGrid(g.face, g.spacing, self.mean_map, g.prism)

    def std_grid(self) -> FaceGrid:
        g = self.grids[0]
        return FaceGrid(g.face, g.spacing, self.std_map, g.prism)


def aggregate_grids(stack) -> GridStack:
    """Per-node mean and sample std across specimens.

    A node missing in any member grid is missing in both maps; the std map is
    all missing for a single grid.
    """
    grids = tuple(stack)
    if not grids:
        raise ProjectionError("need at least one grid to aggregate")
    g0 = grids[0]
    for g in grids[1:]:
        if g.face != g0.face or g.values.shape != g0.values.shape or g.spacing != g0.spacing \
                or g.prism != g0.prism:
            raise ProjectionError("grids differ in face, shape, spacing or prism")
    arr = np.stack([g.values for g in grids])
    mean = arr.mean(axis=0)
    if len(grids) > 1:
        std = arr.std(axis=0, ddof=1)
    else:
        std = np.full_like(mean, np.nan)
    return GridStack(grids, mean, std)


def refine_grid(grid: FaceGrid, factor: int = 2) -> tuple:
    """Bilinear resampling onto a ``factor`` times finer node set.

    Returns ``(u, v, values)`` with the refined node coordinates; points
    outside the original node hull are clamped to it. Optional post-step.
    """
    if factor < 1:
        raise ProjectionError("refinement factor must be >= 1")
    u, v = grid.u, grid.v
    interp = RegularGridInterpolator((u, v), grid.values, method="linear")
    uf = np.linspace(u[0], u[-1], (len(u) - 1) * factor + 1)
    vf = np.linspace(v[0], v[-1], (len(v) - 1) * factor + 1)
    U, V = np.meshgrid(uf, vf, indexing="ij")
    return uf, vf, interp(np.stack([U, V], axis=-1))


def write_stack(stack: GridStack, out_dir, precision: int = 4, prefix: str = "grid") -> list:
    """Write ``<prefix>_<face>_mean.csv`` and ``..._std.csv``; returns the paths."""
    out_dir = Path(out_dir)
    tag = _face_tag(stack.face)
    paths = [out_dir / f"{prefix}_{tag}_mean.csv", out_dir / f"{prefix}_{tag}_std.csv"]
    paths[0].write_text(stack.mean_grid().to_csv(precision))
    paths[1].write_text(stack.std_grid().to_csv(precision))
    return paths


def _face_tag(face: FaceLabel) -> str:
    return ("p" if face.sign > 0 else "m") + "xyz"[face.axis]
