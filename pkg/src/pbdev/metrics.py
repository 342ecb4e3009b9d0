"""Scalar accuracy metrics for registered scans."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, TriangleMesh, mesh_centroid
from .geometry.queries import first_hit_distance


class MetricsError(ValueError):
    pass


def _pts(x) -> np.ndarray:
    p = x.points if isinstance(x, PointCloud) else np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(p) == 0:
        raise MetricsError("metrics need non-empty point sets")
    return p


def directed_distances(P, Q) -> np.ndarray:
    """Distance from every point of ``P`` to its nearest neighbour in ``Q``."""
    d, _ = cKDTree(_pts(Q)).query(_pts(P))
    return d


def hausdorff(P, Q) -> float:
    """Symmetric Hausdorff distance (mm)."""
    return float(max(directed_distances(P, Q).max(), directed_distances(Q, P).max()))


def chamfer(P, Q) -> float:
    """Sum of the two mean directed nearest-neighbour distances (mm, unsquared)."""
    return float(directed_distances(P, Q).mean() + directed_distances(Q, P).mean())


def pai_ratios(scan, reference: TriangleMesh, recenter: bool = True) -> np.ndarray:
    """Per-point ratio of centroid-to-point over centroid-to-reference distance.

    The reference distance is measured along the ray from the common centroid
    through the scan point, to its first intersection with the reference.
    With ``recenter`` the scan is translated so its point centroid coincides
    with the reference's solid centroid.
    """
    P = _pts(scan)
    reference.require_watertight()
    c = mesh_centroid(reference)
    if recenter:
        P = P - P.mean(axis=0) + c
    rays = P - c
    d_cs = np.linalg.norm(rays, axis=1)
    if np.any(d_cs <= 1e-12):
        raise MetricsError("a scan point coincides with the centroid; its ray direction is undefined")
    # Unit directions, so the hit parameter is the centroid-to-surface distance.
    t = first_hit_distance(np.broadcast_to(c, P.shape), rays / d_cs[:, None], reference)
    if np.any(np.isnan(t)):
        raise MetricsError(f"{int(np.isnan(t).sum())} ray(s) from the centroid missed the reference surface")
    return d_cs / t


def pai_from_ratios(ratios) -> tuple:
    """Mean ratio and its sample standard deviation (NaN for a single ratio)."""
    r = np.asarray(ratios, dtype=np.float64)
    if len(r) == 0:
        raise MetricsError("no ratios")
    mean = float(r.mean())
    s = float(r.std(ddof=1)) if len(r) > 1 else math.nan
    return mean, s


def pai(scan, reference: TriangleMesh, recenter: bool = True) -> tuple:
    """Print accuracy index and its standard deviation, ``(pai, s_pai)``."""
    return pai_from_ratios(pai_ratios(scan, reference, recenter))


@dataclass(frozen=True)
class MetricsReport:
    hausdorff_mm: float
    chamfer_mm: float
    pai: float
    s_pai: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)

    def rounded(self, precision: int = 4) -> dict:
        d = self.to_dict()
        return {k: (round(v, precision) if isinstance(v, float) else v) for k, v in d.items()}

    @staticmethod
    def csv_header() -> list:
        return ["specimen", "hausdorff_mm", "chamfer_mm", "pai", "s_pai", "n_points"]

    def csv_row(self, specimen: str, precision: int = 4) -> list:
        f = f"{{:.{precision}f}}"
        return [specimen, f.format(self.hausdorff_mm), f.format(self.chamfer_mm),
                f.format(self.pai), f.format(self.s_pai), str(self.n_points)]


def metrics_table(rows, precision: int = 4) -> str:
    """CSV text with one specimen per row; ``rows`` yields ``(name, MetricsReport)``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MetricsReport.csv_header())
    for name, rep in rows:
        w.writerow(rep.csv_row(name, precision))
    return buf.getvalue()


def metrics_report(scan: PointCloud, reference_cloud: PointCloud, reference_mesh: TriangleMesh) -> MetricsReport:
    p, s = pai(scan, reference_mesh)
    return MetricsReport(
        hausdorff_mm=hausdorff(scan, reference_cloud),
        chamfer_mm=chamfer(scan, reference_cloud),
        pai=p,
        s_pai=s,
        n_points=len(scan),
    )


def pooled_pai(ratio_groups) -> tuple:
    """Group-level PAI over the concatenated per-point ratios of several specimens."""
    return pai_from_ratios(np.concatenate([np.asarray(r, dtype=float) for r in ratio_groups]))
