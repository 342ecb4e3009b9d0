"""Point/mesh queries: closest points, ray hits and inside tests."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .types import TriangleMesh

# Pairs evaluated per vectorised block; bounds peak memory to a few hundred MB.
_BLOCK_PAIRS = 2_000_000

# Fixed, non-axis-aligned directions tried in order when a ray grazes an edge.
_RAY_DIRECTIONS = np.array([
    [0.5773502691896258, 0.3090169943749474, 0.7557613140761707],
    [-0.2672612419124244, 0.8017837257372732, 0.5345224838248488],
    [0.7071067811865475, -0.4082482904638631, 0.5773502691896258],
    [0.1961161351381840, 0.1961161351381840, -0.9607689228305228],
    [-0.8320502943378437, -0.5547001962252291, 0.0],
])
_RAY_DIRECTIONS /= np.linalg.norm(_RAY_DIRECTIONS, axis=1, keepdims=True)


def closest_point_on_triangles(p, a, b, c):
    """Closest points of ``p`` on triangles ``(a, b, c)``.

    All arguments broadcast against each other with a trailing axis of 3.
    Uses the Voronoi-region walk from Ericson, Real-Time Collision Detection.
    """
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(p.shape[:-1], dtype=bool)

    def assign(mask, value):
        nonlocal done
        m = mask & ~done
        if np.any(m):
            out[m] = value[m] if value.shape == out.shape else np.broadcast_to(value, out.shape)[m]
        done |= m

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        assign((d6 >= 0) & (d5 <= d6), c)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[..., None] * ab)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[..., None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[..., None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones_like(done), a + ab * v[..., None] + ac * w[..., None])
    return out


def _blocks(n_points, n_tris):
    step = max(1, _BLOCK_PAIRS // max(n_tris, 1))
    for s in range(0, n_points, step):
        yield slice(s, min(s + step, n_points))


def brute_force_distance(points, mesh: TriangleMesh):
    """Unsigned distance from each point to the nearest triangle, O(n*m)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.corners
    out = np.empty(len(points))
    for sl in _blocks(len(points), len(tri)):
        p = points[sl, None, :]
        q = closest_point_on_triangles(p, tri[None, :, 0], tri[None, :, 1], tri[None, :, 2])
        out[sl] = np.sqrt(np.min(np.sum((q - p) ** 2, axis=-1), axis=1))
    return out


class MeshDistance:
    """Exact unsigned point-to-mesh distance with kd-tree candidate pruning.

    A triangle can only be nearer than the current best ``ub`` if its centroid
    lies within ``ub + r_max`` of the query, ``r_max`` being the largest
    centroid-to-corner radius. Small meshes skip the tree entirely.
    """

    def __init__(self, mesh: TriangleMesh, k: int = 8):
        self.mesh = mesh
        self._tri = mesh.corners
        self._small = len(self._tri) <= 256
        if not self._small:
            cent = self._tri.mean(axis=1)
            self._radius = float(np.max(np.linalg.norm(self._tri - cent[:, None, :], axis=-1)))
            self._tree = cKDTree(cent)
            self._k = min(k, len(self._tri))

    def _exact(self, p, idx):
        t = self._tri[idx]
        q = closest_point_on_triangles(p, t[:, 0], t[:, 1], t[:, 2])
        return np.sqrt(np.sum((q - p) ** 2, axis=-1))

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self._small:
            return brute_force_distance(points, self.mesh)
        _, near = self._tree.query(points, k=self._k)
        near = near.reshape(len(points), -1)
        out = np.empty(len(points))
        for i, p in enumerate(points):
            ub = float(np.min(self._exact(p, near[i])))
            cand = self._tree.query_ball_point(p, ub + self._radius)
            out[i] = min(ub, float(np.min(self._exact(p, np.asarray(cand, dtype=np.int64))))) if cand else ub
        return out


def ray_triangle_hits(origins, directions, mesh: TriangleMesh, eps: float = 1e-12):
    """Moller-Trumbore over all (ray, triangle) pairs.

    Returns ``(t, u, v, det)`` arrays of shape (n_rays, n_tris); ``t`` is NaN
    where the ray's supporting line misses the triangle plane (parallel).
    Barycentric bounds are not applied here so callers choose how to treat
    edge hits.
    """
    o = np.asarray(origins, dtype=np.float64)[:, None, :]
    d = np.asarray(directions, dtype=np.float64)[:, None, :]
    tri = mesh.corners[None]
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    pvec = np.cross(d, e2)
    det = np.einsum("...i,...i", e1, pvec)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(np.abs(det) > eps, 1.0 / det, np.nan)
        tvec = o - tri[..., 0, :]
        u = np.einsum("...i,...i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = np.einsum("...i,...i", d, qvec) * inv
        t = np.einsum("...i,...i", e2, qvec) * inv
    return t, u, v, det


def first_hit_distance(origins, directions, mesh: TriangleMesh, tol: float = 1e-9):
    """Smallest positive ray parameter hitting the mesh, inclusive of edges.

    ``directions`` need not be normalised; the returned value is in units of
    the direction length. NaN where nothing is hit.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    out = np.full(len(origins), np.nan)
    for sl in _blocks(len(origins), len(mesh.triangles)):
        t, u, v, _ = ray_triangle_hits(origins[sl], directions[sl], mesh)
        ok = (u >= -tol) & (v >= -tol) & (u + v <= 1 + tol) & (t > tol)
        t = np.where(ok, t, np.inf)
        best = t.min(axis=1)
        out[sl] = np.where(np.isfinite(best), best, np.nan)
    return out


def contains(points, mesh: TriangleMesh, margin: float = 1e-9) -> np.ndarray:
    """Parity ray-cast inside test against a closed mesh.

    Each point shoots a ray along a fixed oblique direction and counts
    crossings. Rays passing within ``margin`` (barycentric) of an edge or
    vertex, or lying in a triangle's plane, are re-shot along the next
    direction in a fixed list so the result is deterministic. Points lying on
    the surface get an arbitrary answer; callers handle them via distance.
    """
    mesh.require_watertight()
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inside = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    for direction in _RAY_DIRECTIONS:
        if len(pending) == 0:
            break
        unresolved = []
        for sl in _blocks(len(pending), len(mesh.triangles)):
            idx = pending[sl]
            dirs = np.broadcast_to(direction, (len(idx), 3))
            t, u, v, det = ray_triangle_hits(points[idx], dirs, mesh)
            parallel = np.isnan(t)
            w = 1.0 - u - v
            hit = (~parallel) & (u >= 0) & (v >= 0) & (w >= 0) & (t > 0)
            near_edge = (~parallel) & (t > 0) & (
                (np.abs(u) <= margin) | (np.abs(v) <= margin) | (np.abs(w) <= margin)
            ) & (u >= -margin) & (v >= -margin) & (w >= -margin)
            # Coplanar rays through a triangle's plane are ambiguous too.
            coplanar = parallel & (np.abs(det) <= 1e-12)
            ambiguous = near_edge.any(axis=1) | (coplanar & _in_plane(points[idx], mesh)).any(axis=1)
            inside[idx] = (hit.sum(axis=1) % 2) == 1
            unresolved.append(idx[ambiguous])
        pending = np.concatenate(unresolved) if unresolved else pending[:0]
    # Anything still pending after every direction sits on the surface itself;
    # the last parity answer is kept.
    return inside


def _in_plane(points, mesh):
    n = mesh.face_normals
    off = np.einsum("ij,ij->i", n, mesh.corners[:, 0])
    return np.abs(points @ n.T - off[None, :]) <= 1e-9


def winding_number(points, mesh: TriangleMesh) -> np.ndarray:
    """Generalised winding number via summed solid angles (Van Oosterom-Strackee)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.corners
    out = np.empty(len(points))
    for sl in _blocks(len(points), len(tri)):
        a = tri[None, :, 0] - points[sl, None]
        b = tri[None, :, 1] - points[sl, None]
        c = tri[None, :, 2] - points[sl, None]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        num = np.einsum("...i,...i", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("...i,...i", a, b) * lc
               + np.einsum("...i,...i", b, c) * la + np.einsum("...i,...i", c, a) * lb)
        out[sl] = np.sum(2.0 * np.arctan2(num, den), axis=1) / (4.0 * np.pi)
    return out
