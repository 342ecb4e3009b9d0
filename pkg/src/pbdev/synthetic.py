"""Synthetic specimens with analytically known deviations.

Used for regression tests, the acceptance suite and the ``synth`` CLI
command. Everything is driven by an explicit seed.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .dosage import measured_records
from .geometry import PointCloud, ReferencePrism, sample_prism_faces, write_stl, write_xyz
from .registration import RigidTransform

DEFAULT_SEED = 42


def symmetric_prism_samples(prism: ReferencePrism, n_pairs: int, seed: int = DEFAULT_SEED):
    """Boundary samples closed under reflection through the prism centre.

    Returns ``(points, face_index)`` with ``2 * n_pairs`` rows; the point
    centroid is the prism centre up to rounding.
    """
    rng = np.random.default_rng(seed)
    pts, faces = sample_prism_faces(prism, n_pairs, rng)
    mirrored = 2.0 * prism.center - pts
    # Reflection swaps + and - faces, which are adjacent in face order.
    mirrored_faces = faces ^ 1
    # Snap the fixed coordinate onto the opposite plane exactly.
    for f in range(6):
        axis, side = f // 2, 1 - (f % 2)
        m = mirrored_faces == f
        mirrored[m, axis] = prism.hi[axis] if side else prism.lo[axis]
    return np.vstack([pts, mirrored]), np.concatenate([faces, mirrored_faces])


def offset_prism_samples(prism: ReferencePrism, n: int, offset: float, seed: int = DEFAULT_SEED):
    """Points at signed distance ``offset`` from the prism, on its face-parallel offset planes.

    Samples sit over each face rectangle, moved along the outward normal by
    ``offset``. For negative offsets the in-face coordinates keep a margin
    larger than ``|offset|`` from the face edges so the nearest reference face
    stays the sampled one. Returns ``(points, face_index)``.
    """
    rng = np.random.default_rng(seed)
    pts, faces = sample_prism_faces(prism, n, rng)
    if offset < 0:
        margin = 2.0 * abs(offset)
        lo, hi = prism.lo + margin, prism.hi - margin
        if np.any(hi <= lo):
            raise ValueError("offset too deep for this prism")
        for f in range(6):
            axis = f // 2
            m = faces == f
            for a in range(3):
                if a != axis:
                    span = prism.dims[a]
                    t = (pts[m, a] - prism.lo[a]) / span
                    pts[m, a] = lo[a] + t * (hi[a] - lo[a])
    for f in range(6):
        axis, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
        pts[faces == f, axis] += sign * offset
    return pts, faces


def bulged_prism_samples(prism: ReferencePrism, n: int, amplitude: float, offset: float = 0.0,
                         faces=(0, 1, 2, 3), seed: int = DEFAULT_SEED):
    """Surface samples with an elliptical dome of height ``amplitude`` on the listed faces.

    The dome peaks at each face centre and falls to zero at the face edges;
    the face centres themselves are appended so the peak is present.
    ``offset`` adds a uniform outward shift everywhere.
    """
    rng = np.random.default_rng(seed)
    pts, fidx = sample_prism_faces(prism, n, rng)
    centres = []
    for f in faces:
        axis, side = f // 2, f % 2 == 0
        c = prism.center.copy()
        c[axis] = prism.hi[axis] if side else prism.lo[axis]
        centres.append(c)
    pts = np.vstack([pts, centres])
    fidx = np.concatenate([fidx, np.asarray(faces, dtype=int)])
    half = np.array(prism.dims) / 2.0
    for f in range(6):
        axis, sign = f // 2, 1.0 if f % 2 == 0 else -1.0
        m = fidx == f
        shift = np.full(m.sum(), offset)
        if f in faces:
            rel = (pts[m] - prism.center) / half
            others = [a for a in range(3) if a != axis]
            r2 = rel[:, others[0]] ** 2 + rel[:, others[1]] ** 2
            shift += amplitude * np.sqrt(np.clip(1.0 - r2, 0.0, None))
        pts[m, axis] += sign * shift
    return pts, fidx


def random_rigid(rng: np.random.Generator, max_angle_deg: float, max_shift: float) -> RigidTransform:
    axis = rng.normal(size=3)
    angle = np.deg2rad(rng.uniform(0.0, max_angle_deg))
    direction = rng.normal(size=3)
    shift = direction / np.linalg.norm(direction) * rng.uniform(0.0, max_shift)
    return RigidTransform.from_axis_angle(axis, angle, shift)


def bilinear_curve(n: int = 300, preload_slope: float = 200.0, elastic_slope: float = 796.8,
                   kink_strain: float = 0.0025, peak_strain: float = 0.0066, noise: float = 0.005,
                   post_peak: int = 10, seed: int = DEFAULT_SEED):
    """Stress-strain samples: shallow preload, linear elastic branch, short post-peak drop.

    ``noise`` is a relative Gaussian perturbation of each stress sample.
    Returns ``(strain, stress)``.
    """
    rng = np.random.default_rng(seed)
    pre = n - post_peak
    strain = np.linspace(0.0, peak_strain, pre)
    stress = np.where(strain <= kink_strain, preload_slope * strain,
                      preload_slope * kink_strain + elastic_slope * (strain - kink_strain))
    stress = stress * (1.0 + noise * rng.standard_normal(pre))
    peak = stress.max()
    drop_strain = peak_strain + np.arange(1, post_peak + 1) * (strain[1] - strain[0])
    drop = peak * np.linspace(0.8, 0.2, post_peak)
    return np.concatenate([strain, drop_strain]), np.concatenate([stress, drop])


def curve_tsv(strain, stress, header_lines: int = 4) -> str:
    """Tab-separated curve file with strain in percent after ``header_lines`` lines."""
    lines = [f"# synthetic curve header {i + 1}" for i in range(header_lines)]
    lines += [f"{e * 100:.8f}\t{s:.8f}" for e, s in zip(strain, stress)]
    return "\n".join(lines) + "\n"


def dosage_csv(records=None) -> str:
    records = measured_records() if records is None else records
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["nozzle_time_ms", "droplet_mass_mg", "droplet_mass_std_mg", "voxel_count", "retained"])
    for r in records:
        w.writerow([f"{r.nozzle_time:g}", f"{r.droplet_mass:.2f}", f"{r.droplet_mass_std:.2f}",
                    r.voxel_count, "" if r.retained is None else r.retained])
    return buf.getvalue()


def write_fixture_set(out_dir, seed: int = DEFAULT_SEED, n_points: int = 20000) -> dict:
    """Write a small end-to-end fixture set and return the paths by role.

    Two swollen prism scans (uniform +1 mm plus face domes) in a perturbed
    pose, the nominal prism STL, the dosage table and three bending curves.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    prism = ReferencePrism()
    paths = {"scans": [], "curves": []}
    for i, amp in enumerate((3.0, 6.0)):
        pts, _ = bulged_prism_samples(prism, n_points, amplitude=amp, offset=1.0, seed=seed + i)
        pose = random_rigid(rng, 8.0, 10.0)
        p = out / f"scan_20ms_{i + 1}.xyz"
        write_xyz(PointCloud(pose.apply(pts)), p)
        paths["scans"].append(p)
    ref = out / "reference_prism.stl"
    write_stl(prism.to_mesh(), ref)
    paths["reference_stl"] = ref
    dos = out / "dosage.csv"
    dos.write_text(dosage_csv())
    paths["dosage"] = dos
    for i, slope in enumerate((780.0, 796.8, 910.0)):
        e, s = bilinear_curve(elastic_slope=slope, seed=seed + 10 + i)
        p = out / f"bending_{(20, 20, 30)[i]}ms_{i + 1}.txt"
        p.write_text(curve_tsv(e, s))
        paths["curves"].append(p)
    return paths
