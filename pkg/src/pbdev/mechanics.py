"""Stress-strain conversion and windowed Young's modulus extraction."""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class MechanicsError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LoadRecord:
    """Ordered (displacement mm, force N) samples."""

    displacement: np.ndarray
    force: np.ndarray

    def __post_init__(self):
        d = np.array(self.displacement, dtype=np.float64).reshape(-1)
        f = np.array(self.force, dtype=np.float64).reshape(-1)
        if d.shape != f.shape:
            raise MechanicsError("displacement and force differ in length")
        object.__setattr__(self, "displacement", d)
        object.__setattr__(self, "force", f)

    def __len__(self) -> int:
        return len(self.displacement)

    def preprocessed(self) -> "LoadRecord":
        """Drop non-finite rows and samples that step back in displacement, then
        shift so the first sample is (0, 0)."""
        return LoadRecord(*_clean(self.displacement, self.force))


@dataclass(frozen=True, eq=False)
class Curve:
    strain: np.ndarray
    stress: np.ndarray  # MPa

    def __len__(self) -> int:
        return len(self.strain)


@dataclass(frozen=True)
class BendingSetup:
    width: float  # b, mm
    height: float  # h, mm
    span: float = 120.0  # mm

    def __post_init__(self):
        if min(self.width, self.height, self.span) <= 0:
            raise MechanicsError("bending dimensions must be positive")


@dataclass(frozen=True)
class ElasticFit:
    young_modulus: float  # MPa
    r_squared: float
    window_start: int
    window_len: int
    intercept: float
    peak_stress: float  # MPa
    peak_index: int

    def to_dict(self) -> dict:
        return {"E_MPa": self.young_modulus, "R2": self.r_squared,
                "sigma_max_MPa": self.peak_stress,
                "window": {"start": self.window_start, "length": self.window_len}}


def _clean(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    if len(x) == 0:
        raise MechanicsError("no samples left after filtering")
    keep = x >= np.maximum.accumulate(x)
    x, y = x[keep], y[keep]
    return x - x[0], y - y[0]


def bending_stress_strain(record: LoadRecord, setup: BendingSetup) -> Curve:
    """Three-point bending: stress 3FL/(2bh^2), strain 6h*delta/L^2.

    Elastic small-deflection beam theory; meaningful only before the peak.
    """
    L, b, h = setup.span, setup.width, setup.height
    return Curve(6.0 * h * record.displacement / L ** 2, 3.0 * record.force * L / (2.0 * b * h ** 2))


def compression_stress_strain(record: LoadRecord, area: float, height: float) -> Curve:
    if area <= 0 or height <= 0:
        raise MechanicsError("area and height must be positive")
    if len(record) == 0:
        raise MechanicsError("empty load record")
    return Curve(record.displacement / height, record.force / area)


def fit_young_modulus(curve: Curve, window_len: int = 100, stride: int = 1,
                      slope_floor: float = 0.5, zero_shift: bool = True) -> ElasticFit:
    """Slope of the most linear window of the pre-peak curve.

    Windows of ``window_len`` consecutive samples slide by ``stride`` and
    must end at or before the peak-stress sample. Each is fitted by ordinary
    least squares; among windows whose slope reaches ``slope_floor`` times the
    steepest window slope, the one with the highest R^2 wins. The floor keeps
    a straight but shallow preload segment from being picked.
    """
    x = np.asarray(curve.strain, dtype=np.float64)
    y = np.asarray(curve.stress, dtype=np.float64)
    if zero_shift:
        x, y = _clean(x, y)
    if window_len < 2:
        raise MechanicsError("window must span at least 2 samples")
    if len(x) < window_len:
        raise MechanicsError(f"curve has {len(x)} samples, shorter than the {window_len}-sample window")
    peak = int(np.argmax(y))
    usable = peak + 1
    if usable < window_len:
        raise MechanicsError(f"peak at sample {peak} leaves no full window before it")
    X = sliding_window_view(x[:usable], window_len)[::stride]
    Y = sliding_window_view(y[:usable], window_len)[::stride]
    xc = X - X.mean(axis=1, keepdims=True)
    yc = Y - Y.mean(axis=1, keepdims=True)
    sxx = np.einsum("ij,ij->i", xc, xc)
    sxy = np.einsum("ij,ij->i", xc, yc)
    syy = np.einsum("ij,ij->i", yc, yc)
    valid = (sxx > 0) & (syy > 0)
    if not np.any(valid):
        raise MechanicsError("stress (or strain) is constant in every window; R^2 undefined")
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(valid, sxy / sxx, np.nan)
        resid = Y - (Y.mean(axis=1) - slope * X.mean(axis=1))[:, None] - slope[:, None] * X
        r2 = np.where(valid, 1.0 - np.einsum("ij,ij->i", resid, resid) / syy, np.nan)
    r2 = np.clip(r2, 0.0, 1.0)
    max_slope = np.nanmax(slope)
    if not max_slope > 0:
        raise MechanicsError("no window has a positive slope")
    eligible = valid & (slope >= slope_floor * max_slope)
    score = np.where(eligible, r2, -np.inf)
    w = int(np.argmax(score))
    start = w * stride
    return ElasticFit(
        young_modulus=float(slope[w]),
        r_squared=float(r2[w]),
        window_start=start,
        window_len=window_len,
        intercept=float(Y[w].mean() - slope[w] * X[w].mean()),
        peak_stress=float(y[peak]),
        peak_index=peak,
    )


def moving_average(values, window: int) -> np.ndarray:
    """Centred moving average; windows shrink at both ends instead of padding."""
    if window < 1:
        raise MechanicsError("window must be >= 1")
    v = np.asarray(values, dtype=np.float64)
    if window == 1:
        return v.copy()
    n = len(v)
    left = (window - 1) // 2
    right = window // 2
    i = np.arange(n)
    lo = np.maximum(i - left, 0)
    hi = np.minimum(i + right + 1, n)
    c = np.concatenate([[0.0], np.cumsum(v)])
    return (c[hi] - c[lo]) / (hi - lo)


def read_tsv(path_or_text, skip: int = 4, columns=(0, 1)) -> tuple:
    """Two numeric columns from a tab-separated file after ``skip`` header lines.

    Decimal commas are accepted. Returns ``(col_a, col_b)`` arrays.
    """
    if isinstance(path_or_text, Path) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text(encoding="utf-8", errors="replace")
    else:
        text = path_or_text
    a, b = [], []
    for lineno, line in enumerate(text.splitlines()[skip:], skip + 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        try:
            a.append(float(parts[columns[0]].strip().replace(",", ".")))
            b.append(float(parts[columns[1]].strip().replace(",", ".")))
        except (IndexError, ValueError):
            raise MechanicsError(f"line {lineno}: expected numeric tab-separated columns") from None
    if len(a) < 2:
        raise MechanicsError("need at least 2 samples")
    return np.array(a), np.array(b)


def read_curve(path_or_text, skip: int = 4, strain_percent: bool = True) -> Curve:
    """Stress-strain file: strain (percent unless ``strain_percent`` is off), stress MPa."""
    e, s = read_tsv(path_or_text, skip)
    return Curve(e / 100.0 if strain_percent else e, s)


def read_load_record(path_or_text, skip: int = 4) -> LoadRecord:
    """Load-displacement file: displacement mm, force N."""
    d, f = read_tsv(path_or_text, skip)
    return LoadRecord(d, f)


_NOZZLE_RE = re.compile(r"(?<![0-9])(\d+(?:\.\d+)?)\s*ms(?![a-z])", re.IGNORECASE)


def nozzle_time_from_name(name: str) -> Optional[float]:
    """``bending_20250213_20ms_1.txt`` -> 20.0; None if no ``<n>ms`` token."""
    m = _NOZZLE_RE.search(name)
    return float(m.group(1)) if m else None


def batch_table(results, precision: int = 4) -> str:
    """Group ``(nozzle_time, ElasticFit)`` pairs: mean and sample std of E and peak stress."""
    groups: dict = {}
    for t, fit in results:
        groups.setdefault(t, []).append(fit)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["nozzle_time_ms", "n", "E_mean_MPa", "E_std_MPa", "sigma_max_mean_MPa", "sigma_max_std_MPa"])
    f = f"{{:.{precision}f}}".format
    for t in sorted(groups, key=lambda k: (k is None, k if k is not None else 0)):
        E = np.array([g.young_modulus for g in groups[t]])
        S = np.array([g.peak_stress for g in groups[t]])
        std = lambda a: f(a.std(ddof=1)) if len(a) > 1 else ""  # noqa: E731
        w.writerow(["" if t is None else f(t), len(E), f(E.mean()), std(E), f(S.mean()), std(S)])
    return buf.getvalue()
