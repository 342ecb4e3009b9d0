"""Signed point-to-reference distances and face-group labels."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, ReferencePrism, TriangleMesh
from .geometry.queries import MeshDistance, contains

# Points closer than this to the surface are reported as lying on it.
SURFACE_TOL = 1e-10
_TIE_TOL = 1e-9


class FaceLabel(str, enum.Enum):
    """Prism face by outward normal; declaration order is the tie-break order."""

    PX = "+x"
    NX = "-x"
    PY = "+y"
    NY = "-y"
    PZ = "+z"
    NZ = "-z"

    @property
    def axis(self) -> int:
        return "xyz".index(self.value[1])

    @property
    def sign(self) -> int:
        return 1 if self.value[0] == "+" else -1

    @property
    def normal(self) -> np.ndarray:
        n = np.zeros(3)
        n[self.axis] = self.sign
        return n

    @property
    def uv_axes(self) -> tuple:
        return tuple(a for a in range(3) if a != self.axis)

    @classmethod
    def parse(cls, text: str) -> "FaceLabel":
        return cls(text.strip().replace("−", "-"))

    def __str__(self) -> str:
        return self.value


FACES = tuple(FaceLabel)


def face_distances(points, prism: ReferencePrism) -> np.ndarray:
    """Distance from each point to each of the six closed face rectangles, shape (n, 6)."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    lo, hi = prism.lo, prism.hi
    out = np.empty((len(p), 6))
    for k, face in enumerate(FACES):
        q = np.clip(p, lo, hi)
        q[:, face.axis] = hi[face.axis] if face.sign > 0 else lo[face.axis]
        out[:, k] = np.linalg.norm(p - q, axis=1)
    return out


def classify_faces(points, prism: ReferencePrism) -> np.ndarray:
    """Index into :data:`FACES` of the nearest face rectangle for every point."""
    d = face_distances(points, prism)
    near = d <= d.min(axis=1, keepdims=True) + _TIE_TOL
    return np.argmax(near, axis=1)


def classify_face(p, reference: ReferencePrism) -> FaceLabel:
    return FACES[int(classify_faces(np.asarray(p, dtype=float)[None], reference)[0])]


def signed_distances(points, reference: TriangleMesh) -> np.ndarray:
    """Signed distances of many points; positive outside, negative inside."""
    reference.require_watertight()
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dist = MeshDistance(reference)(points)
    off = dist > SURFACE_TOL
    sign = np.ones(len(points))
    if np.any(off):
        sign[off] = np.where(contains(points[off], reference), -1.0, 1.0)
    return np.where(off, sign * dist, 0.0)


def signed_distance(p, reference: TriangleMesh) -> float:
    return float(signed_distances(np.asarray(p, dtype=float)[None], reference)[0])


def box_signed_distances(points, prism: ReferencePrism) -> np.ndarray:
    """Closed-form signed distance to an axis-aligned box."""
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    half = np.array(prism.dims) / 2.0
    q = np.abs(p - prism.center) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(q.max(axis=1), 0.0)
    return outside + inside


@dataclass(frozen=True, eq=False)
class DeviationField:
    points: PointCloud
    signed_distance: np.ndarray
    face_index: np.ndarray

    def __post_init__(self):
        sd = np.array(self.signed_distance, dtype=np.float64)
        fi = np.array(self.face_index, dtype=np.int64)
        if not (len(sd) == len(fi) == len(self.points)):
            raise ValueError("deviation field arrays differ in length")
        if not np.all(np.isfinite(sd)):
            raise ValueError("signed distances must be finite")
        sd.setflags(write=False)
        fi.setflags(write=False)
        object.__setattr__(self, "signed_distance", sd)
        object.__setattr__(self, "face_index", fi)

    def __len__(self) -> int:
        return len(self.signed_distance)

    @property
    def faces(self) -> list:
        return [FACES[i] for i in self.face_index]

    def with_offset(self, c: float) -> "DeviationField":
        return DeviationField(self.points, self.signed_distance + c, self.face_index)

    def face_stats(self) -> dict:
        """Per-face ``{n, mean, std, min, max}`` in mm (std with n-1; None when undefined)."""
        out = {}
        for k, face in enumerate(FACES):
            d = self.signed_distance[self.face_index == k]
            out[face.value] = {
                "n": int(len(d)),
                "mean": float(d.mean()) if len(d) else None,
                "std": float(d.std(ddof=1)) if len(d) > 1 else None,
                "min": float(d.min()) if len(d) else None,
                "max": float(d.max()) if len(d) else None,
            }
        return out

    def to_csv(self, precision: int = 4) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "z", "signed_distance_mm", "face"])
        f = f"{{:.{precision}f}}"
        for p, d, k in zip(self.points.points, self.signed_distance, self.face_index):
            w.writerow([f.format(p[0]), f.format(p[1]), f.format(p[2]), f.format(d), FACES[k].value])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DeviationField":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("deviation CSV has no data rows")
        missing = {"x", "y", "z", "signed_distance_mm", "face"} - set(rows[0])
        if missing:
            raise ValueError(f"deviation CSV lacks columns: {sorted(missing)}")
        pts = np.array([[float(r["x"]), float(r["y"]), float(r["z"])] for r in rows])
        sd = np.array([float(r["signed_distance_mm"]) for r in rows])
        fi = np.array([FACES.index(FaceLabel.parse(r["face"])) for r in rows])
        return cls(PointCloud(pts), sd, fi)


def deviation_field(aligned: PointCloud, reference: TriangleMesh, prism: ReferencePrism,
                    box_fast_path: bool = False) -> DeviationField:
    """Signed distance and nearest-face label for every registered scan point.

    ``box_fast_path`` swaps the mesh query for the closed-form box distance;
    only valid when ``reference`` is the prism itself.
    """
    if box_fast_path:
        sd = box_signed_distances(aligned.points, prism)
    else:
        sd = signed_distances(aligned.points, reference)
    return DeviationField(aligned, sd, classify_faces(aligned.points, prism))
