"""Water dosage bookkeeping and water-to-cement ratio estimates.

Units: droplet masses in mg, part masses in g, volumes in mm^3, voxel pitch
in mm, bulk density in kg/m^3 (1 kg/m^3 = 1e-3 mg/mm^3).
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from typing import Optional

PRISM_VOXELS = 28 * 7 * 7
VOXEL_PITCH = 5.7


class DosageError(ValueError):
    pass


@dataclass(frozen=True)
class PowderSpec:
    bulk_density: float = 1695.0  # kg/m^3
    cement_fraction: float = 0.25

    def __post_init__(self):
        if not self.bulk_density > 0:
            raise DosageError("bulk density must be positive")
        if not 0 < self.cement_fraction < 1:
            raise DosageError("cement fraction must lie in (0, 1)")


@dataclass(frozen=True)
class DosageRecord:
    nozzle_time: float  # ms
    droplet_mass: float  # mg
    droplet_mass_std: float = 0.0
    voxel_count: int = PRISM_VOXELS
    retained: Optional[int] = None
    total_mass: Optional[float] = None  # g, specimen mass for the mass-balance estimate
    v_real: Optional[float] = None  # mm^3, measured specimen volume

    def __post_init__(self):
        if self.nozzle_time <= 0 or self.droplet_mass <= 0 or self.voxel_count <= 0:
            raise DosageError("nozzle time, droplet mass and voxel count must be positive")
        if self.droplet_mass_std < 0:
            raise DosageError("droplet mass std must be non-negative")

    @property
    def water_mass_per_part(self) -> float:
        return water_mass_per_part(self.droplet_mass, self.voxel_count)

    @property
    def water_mass_per_part_std(self) -> float:
        return water_mass_per_part(self.droplet_mass_std, self.voxel_count) if self.droplet_mass_std else 0.0

    @property
    def mass_flow_rate(self) -> float:
        """mg/ms."""
        return self.droplet_mass / self.nozzle_time


@dataclass(frozen=True)
class WcEstimate:
    nozzle_time: float
    theo: float
    theo_std: float
    mass_based: Optional[float] = None
    gamma: Optional[float] = None
    corrected: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def water_mass_per_part(droplet_mass: float, voxel_count: int) -> float:
    """Water per printed part in g from the per-voxel droplet mass in mg."""
    if droplet_mass < 0 or voxel_count < 0:
        raise DosageError("droplet mass and voxel count must be non-negative")
    return droplet_mass * voxel_count / 1000.0


def voxel_mass(voxel_pitch: float = VOXEL_PITCH, powder: PowderSpec = PowderSpec()) -> float:
    """Powder mass of one cubic voxel in mg."""
    if voxel_pitch <= 0:
        raise DosageError("voxel pitch must be positive")
    return powder.bulk_density * 1e-3 * voxel_pitch ** 3


def wc_theoretical(droplet_mass: float, voxel_pitch: float = VOXEL_PITCH,
                   powder: PowderSpec = PowderSpec()) -> float:
    """Ratio assuming the whole droplet stays inside its voxel (an upper bound)."""
    return droplet_mass / (powder.cement_fraction * voxel_mass(voxel_pitch, powder))


def wc_mass_based(total_mass: float, total_water: float, cement_fraction: float = 0.25) -> float:
    """Ratio from the weighed part mass minus its dosed water."""
    if not total_water >= 0:
        raise DosageError("water mass must be non-negative")
    solid = total_mass - total_water
    if solid <= 0:
        raise DosageError(f"non-positive solid mass: total {total_mass} g, water {total_water} g")
    return total_water / (cement_fraction * solid)


def wc_volume_corrected(theo: float, v_real: float, v_ref: float) -> tuple:
    """``(gamma, corrected)`` with ``gamma = v_real / v_ref`` and ``corrected = gamma * theo``."""
    if v_real <= 0 or v_ref <= 0:
        raise DosageError("volumes must be positive")
    gamma = v_real / v_ref
    return gamma, gamma * theo


def estimate(record: DosageRecord, voxel_pitch: float = VOXEL_PITCH, powder: PowderSpec = PowderSpec(),
             v_ref: Optional[float] = None) -> WcEstimate:
    """All estimates available for one dosage record.

    ``v_ref`` defaults to the volume of ``voxel_count`` cubic voxels.
    """
    theo = wc_theoretical(record.droplet_mass, voxel_pitch, powder)
    theo_std = wc_theoretical(record.droplet_mass_std, voxel_pitch, powder) if record.droplet_mass_std else 0.0
    mass_based = gamma = corrected = None
    if record.total_mass is not None:
        mass_based = wc_mass_based(record.total_mass, record.water_mass_per_part, powder.cement_fraction)
    if record.v_real is not None:
        ref = v_ref if v_ref is not None else record.voxel_count * voxel_pitch ** 3
        gamma, corrected = wc_volume_corrected(theo, record.v_real, ref)
    return WcEstimate(record.nozzle_time, theo, theo_std, mass_based, gamma, corrected)


_REQUIRED = ("nozzle_time_ms", "droplet_mass_mg", "droplet_mass_std_mg", "voxel_count", "retained")


def read_dosage_csv(text: str) -> list:
    """Parse the dosage table; optional ``total_mass_g`` / ``v_real_mm3`` columns feed the
    mass-balance and volume-corrected estimates."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise DosageError("dosage CSV is empty")
    missing = [c for c in _REQUIRED if c not in reader.fieldnames]
    if missing:
        raise DosageError(f"dosage CSV lacks columns: {missing}")
    out = []
    for lineno, row in enumerate(reader, 2):
        try:
            out.append(DosageRecord(
                nozzle_time=float(row["nozzle_time_ms"]),
                droplet_mass=float(row["droplet_mass_mg"]),
                droplet_mass_std=float(row["droplet_mass_std_mg"] or 0),
                voxel_count=int(row["voxel_count"]),
                retained=int(row["retained"]) if row["retained"] not in (None, "") else None,
                total_mass=_opt(row.get("total_mass_g")),
                v_real=_opt(row.get("v_real_mm3")),
            ))
        except (TypeError, ValueError) as exc:
            raise DosageError(f"dosage CSV line {lineno}: {exc}") from None
    if not out:
        raise DosageError("dosage CSV has no rows")
    return out


def _opt(x):
    return None if x in (None, "") else float(x)


def dosage_table_csv(records, estimates, precision: int = 4) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["nozzle_time_ms", "droplet_mass_mg", "mass_flow_rate_mg_per_ms", "water_mass_per_part_g",
                "water_mass_per_part_std_g", "wc_theo", "wc_theo_std", "wc_mass", "gamma", "wc_corr"])
    f = f"{{:.{precision}f}}".format
    opt = lambda x: "" if x is None else f(x)  # noqa: E731
    for r, e in zip(records, estimates):
        w.writerow([f(r.nozzle_time), f(r.droplet_mass), f(r.mass_flow_rate), f(r.water_mass_per_part),
                    f(r.water_mass_per_part_std), f(e.theo), f(e.theo_std), opt(e.mass_based),
                    opt(e.gamma), opt(e.corrected)])
    return buf.getvalue()


# Gravimetric nozzle calibration per nozzle opening time (16 nozzles, 10 s,
# triplicates): (nozzle_time_ms, droplet_mass_mg, droplet_mass_std_mg, retained).
MEASURED_DOSAGES = (
    (11, 29.52, 0.06, 2),
    (15, 29.50, 0.12, 2),
    (17, 33.58, 0.17, 4),
    (20, 40.86, 0.03, 3),
    (22, 43.30, 0.34, 3),
    (25, 51.33, 0.11, 1),
    (30, 63.94, 0.55, 3),
)


def measured_records(voxel_count: int = PRISM_VOXELS) -> list:
    return [DosageRecord(t, m, s, voxel_count, r) for t, m, s, r in MEASURED_DOSAGES]
