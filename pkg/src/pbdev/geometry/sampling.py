"""Surface sampling and random downsampling. All randomness is seeded."""
from __future__ import annotations

import numpy as np

from .types import GeometryError, PointCloud, ReferencePrism, TriangleMesh

DEFAULT_SEED = 42


def prism_faces(prism: ReferencePrism):
    """Yield ``(axis, side, u_axis, v_axis)`` for the six faces, +x first."""
    for axis in range(3):
        u, v = [a for a in range(3) if a != axis]
        for side in (1, 0):
            yield axis, side, u, v


def sample_prism_faces(prism: ReferencePrism, n: int, rng: np.random.Generator):
    """Area-weighted uniform samples on the prism boundary.

    Returns ``(points, face_index)`` with face indices in the order of
    :func:`prism_faces`. The fixed coordinate of each point is copied from
    the face plane so samples lie exactly on the boundary.
    """
    faces = list(prism_faces(prism))
    dims = np.array(prism.dims)
    areas = np.array([dims[u] * dims[v] for _, _, u, v in faces])
    which = rng.choice(len(faces), size=n, p=areas / areas.sum())
    uv = rng.random((n, 2))
    pts = np.empty((n, 3))
    lo, hi = prism.lo, prism.hi
    for f, (axis, side, u, v) in enumerate(faces):
        m = which == f
        pts[m, axis] = hi[axis] if side else lo[axis]
        pts[m, u] = lo[u] + uv[m, 0] * dims[u]
        pts[m, v] = lo[v] + uv[m, 1] * dims[v]
    return pts, which


def sample_reference_surface(prism: ReferencePrism, n_random: int = 1000, seed: int = DEFAULT_SEED) -> PointCloud:
    """``n_random`` boundary samples followed by the eight prism corners."""
    if n_random < 0:
        raise GeometryError("n_random must be non-negative")
    rng = np.random.default_rng(seed)
    pts, _ = sample_prism_faces(prism, n_random, rng)
    return PointCloud(np.vstack([pts, prism.corner_points]))


def sample_mesh_surface(mesh: TriangleMesh, n_random: int, seed: int = DEFAULT_SEED,
                        include_vertices: bool = True) -> PointCloud:
    """Area-weighted uniform samples on an arbitrary mesh (plus its vertices)."""
    if n_random < 0:
        raise GeometryError("n_random must be non-negative")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas
    tri = mesh.corners[rng.choice(len(areas), size=n_random, p=areas / areas.sum())]
    r1 = np.sqrt(rng.random(n_random))[:, None]
    r2 = rng.random(n_random)[:, None]
    pts = (1 - r1) * tri[:, 0] + r1 * (1 - r2) * tri[:, 1] + r1 * r2 * tri[:, 2]
    if include_vertices:
        pts = np.vstack([pts, mesh.vertices])
    return PointCloud(pts)


def downsample_random(cloud: PointCloud, target: int, seed: int = DEFAULT_SEED) -> PointCloud:
    """Uniform random subset of ``target`` points without replacement.

    Clouds already at or below ``target`` come back unchanged. Selected
    points keep their original relative order.
    """
    if target < 1:
        raise GeometryError("downsample target must be at least 1")
    if len(cloud) <= target:
        return cloud
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(cloud), size=target, replace=False))
    return cloud.subset(idx)
