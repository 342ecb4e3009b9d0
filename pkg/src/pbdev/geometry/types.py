"""Point cloud, triangle mesh and reference prism containers.

All coordinates are millimetres. Arrays held by the containers are made
read-only on construction so instances can be shared freely.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DEGENERATE_AREA = 1e-12
NORMAL_TOL = 1e-9


class GeometryError(ValueError):
    """Invalid geometric input (bad indices, degenerate faces, open meshes)."""


class NotWatertightError(GeometryError):
    pass


def _frozen(a, dtype=np.float64, shape_tail=(3,)) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise GeometryError(f"expected array of shape (N, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _frozen(self.points)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = _frozen(self.normals)
            if nrm.shape != pts.shape:
                raise GeometryError("normals must match points in length")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > NORMAL_TOL:
                raise GeometryError("normals must be unit vectors")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def subset(self, idx) -> "PointCloud":
        idx = np.asarray(idx)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle surface.

    Construction checks index range and rejects triangles with area at or
    below ``DEGENERATE_AREA`` mm^2. Watertightness is not required here; use
    :attr:`is_watertight` or :meth:`require_watertight` where it matters.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = _frozen(self.vertices)
        if not np.all(np.isfinite(v)):
            raise GeometryError("vertex coordinates must be finite")
        t = np.array(self.triangles, dtype=np.int64, copy=True)
        if t.size == 0:
            t = t.reshape(0, 3)
        if t.ndim != 2 or t.shape[1] != 3:
            raise GeometryError(f"triangles must have shape (M, 3), got {t.shape}")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise GeometryError("triangle vertex index out of range")
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if len(t):
            bad = np.flatnonzero(self.face_areas <= DEGENERATE_AREA)
            if len(bad):
                raise GeometryError(f"{len(bad)} degenerate triangle(s), first at index {bad[0]}")

    @property
    def corners(self) -> np.ndarray:
        """Triangle corner coordinates, shape (M, 3, 3)."""
        return self.vertices[self.triangles]

    @property
    def face_normals(self) -> np.ndarray:
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def face_areas(self) -> np.ndarray:
        c = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @property
    def bounds(self) -> np.ndarray:
        return np.vstack([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def is_watertight(self) -> bool:
        """True when every undirected edge is shared by exactly two triangles."""
        if len(self.triangles) == 0:
            return False
        t = self.triangles
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    @property
    def is_consistently_oriented(self) -> bool:
        """Each directed edge appears once, so neighbours agree on winding."""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        _, counts = np.unique(directed, axis=0, return_counts=True)
        return bool(np.all(counts == 1))

    def require_watertight(self) -> None:
        if not self.is_watertight:
            raise NotWatertightError("mesh is not watertight (some edge is not shared by exactly two triangles)")

    def transformed(self, rotation, translation) -> "TriangleMesh":
        v = self.vertices @ np.asarray(rotation, dtype=float).T + np.asarray(translation, dtype=float)
        return TriangleMesh(v, self.triangles)


@dataclass(frozen=True)
class ReferencePrism:
    """Axis-aligned ideal prism, ``origin`` at its minimum corner."""

    dims: tuple = (159.6, 39.9, 39.9)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(origin) != 3:
            raise GeometryError("prism dims and origin need three components")
        if not all(np.isfinite(dims)) or min(dims) <= 0:
            raise GeometryError(f"prism dims must be strictly positive, got {dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "origin", origin)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.origin) + np.array(self.dims)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.origin) + np.array(self.dims) / 2.0

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def corner_points(self) -> np.ndarray:
        lo, hi = self.lo, self.hi
        return np.array([[(lo, hi)[i][0], (lo, hi)[j][1], (lo, hi)[k][2]]
                         for i in (0, 1) for j in (0, 1) for k in (0, 1)])

    def to_mesh(self) -> TriangleMesh:
        return box_mesh(self.dims, self.origin)


# Outward-wound box triangulation over the 8 corners indexed as (i, j, k) bits.
_BOX_TRIANGLES = np.array([
    [0, 1, 3], [0, 3, 2],  # -x
    [4, 6, 7], [4, 7, 5],  # +x
    [0, 4, 5], [0, 5, 1],  # -y
    [2, 3, 7], [2, 7, 6],  # +y
    [0, 2, 6], [0, 6, 4],  # -z
    [1, 5, 7], [1, 7, 3],  # +z
])


def box_mesh(dims, origin=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed, outward-oriented 12-triangle box."""
    lo = np.asarray(origin, dtype=float)
    hi = lo + np.asarray(dims, dtype=float)
    verts = np.array([[(lo, hi)[i][0], (lo, hi)[j][1], (lo, hi)[k][2]]
                      for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    return TriangleMesh(verts, _BOX_TRIANGLES)


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Subdivided icosahedron; ``subdivisions=3`` gives 1280 faces."""
    phi = (1 + 5 ** 0.5) / 2
    verts = [[-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
             [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
             [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1]]
    faces = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
             [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
             [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
             [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        midpoint = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in midpoint:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces
    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriangleMesh(v, np.array(faces))


def mesh_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume in mm^3 from the divergence theorem.

    Sums signed tetrahedra spanned by each triangle and the origin, so the
    mesh has to be closed and consistently wound; the absolute value is
    returned so inward winding is tolerated.
    """
    mesh.require_watertight()
    c = mesh.corners
    # Shift to the first vertex to keep the tetra determinants well conditioned.
    c = c - mesh.vertices[0]
    signed = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0
    return float(abs(signed))


def mesh_centroid(mesh: TriangleMesh) -> np.ndarray:
    """Centroid of the enclosed solid (volume-weighted tetrahedra)."""
    mesh.require_watertight()
    ref = mesh.vertices[0]
    c = mesh.corners - ref
    vols = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])) / 6.0
    total = vols.sum()
    if abs(total) <= 0:
        raise GeometryError("mesh encloses zero volume")
    cent = (vols[:, None] * c.sum(axis=1) / 4.0).sum(axis=0) / total
    return cent + ref
