"""Voxel print models: slicing from STL, deviation-driven compensation, instructions.

Occupancy arrays are indexed ``[ix, iy, iz]``; voxel ``(i, j, k)`` spans
``origin + (i, j, k) * pitch`` to ``origin + (i + 1, j + 1, k + 1) * pitch``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy import ndimage

from .deviation import FaceLabel
from .geometry import TriangleMesh
from .geometry.queries import contains
from .projection import FaceGrid, GridStack

DEFAULT_PITCH = 5.7
DEFAULT_NOZZLE_TIME = 20.0


class VoxelError(ValueError):
    pass


class ConnectivityWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class VoxelModel:
    occupancy: np.ndarray
    pitch: float = DEFAULT_PITCH
    origin: tuple = (0.0, 0.0, 0.0)
    nozzle_time: Optional[np.ndarray] = None  # ms per voxel; uniform default when None
    default_nozzle_time: float = DEFAULT_NOZZLE_TIME

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool)
        if occ.ndim != 3 or min(occ.shape) < 1:
            raise VoxelError(f"occupancy must be a non-empty 3-D array, got shape {occ.shape}")
        if not self.pitch > 0:
            raise VoxelError("pitch must be positive")
        nt = self.nozzle_time
        if nt is None:
            nt = np.full(occ.shape, float(self.default_nozzle_time))
        nt = np.array(nt, dtype=np.float64)
        if nt.shape != occ.shape:
            raise VoxelError("nozzle_time must match occupancy shape")
        occ.setflags(write=False)
        nt.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "nozzle_time", nt)
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple:
        return self.occupancy.shape

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    @property
    def size_mm(self) -> tuple:
        return tuple(d * self.pitch for d in self.dims)

    def occupied_extent(self) -> tuple:
        """Voxel counts of the occupied bounding box."""
        if self.count == 0:
            return (0, 0, 0)
        idx = np.argwhere(self.occupancy)
        return tuple(int(x) for x in idx.max(axis=0) - idx.min(axis=0) + 1)

    def with_occupancy(self, occ) -> "VoxelModel":
        return VoxelModel(occ, self.pitch, self.origin, self.nozzle_time, self.default_nozzle_time)

    def to_dict(self) -> dict:
        d = {
            "dims": list(self.dims),
            "pitch_mm": self.pitch,
            "origin_mm": list(self.origin),
            "nozzle_time_ms": self.default_nozzle_time,
            "occupancy_rle": rle_encode(self.occupancy),
        }
        occupied_times = self.nozzle_time[self.occupancy]
        if np.any(occupied_times != self.default_nozzle_time):
            d["nozzle_time_rle"] = rle_encode(np.where(self.occupancy, self.nozzle_time, self.default_nozzle_time))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "VoxelModel":
        try:
            dims = tuple(int(x) for x in d["dims"])
            occ = rle_decode(d["occupancy_rle"], dims).astype(bool)
            default = float(d.get("nozzle_time_ms", DEFAULT_NOZZLE_TIME))
            nt = rle_decode(d["nozzle_time_rle"], dims) if "nozzle_time_rle" in d else None
            return cls(occ, float(d["pitch_mm"]), tuple(d.get("origin_mm", (0, 0, 0))), nt, default)
        except (KeyError, TypeError) as exc:
            raise VoxelError(f"bad voxel model JSON: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "VoxelModel":
        return cls.from_dict(json.loads(text))


def rle_encode(arr: np.ndarray) -> str:
    """Run-length string ``"count*value,..."`` over x-fastest order (x, then y, then z)."""
    flat = np.asarray(arr).transpose(2, 1, 0).reshape(-1)
    if flat.size == 0:
        return ""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    vals = flat[starts]
    fmt = (lambda v: str(int(v))) if flat.dtype == bool else (lambda v: repr(float(v)))
    return ",".join(f"{n}*{fmt(v)}" for n, v in zip(lengths, vals))


def rle_decode(text: str, dims) -> np.ndarray:
    nx, ny, nz = dims
    vals = []
    for token in filter(None, text.split(",")):
        n, v = token.split("*")
        vals.append(np.full(int(n), float(v)))
    flat = np.concatenate(vals) if vals else np.zeros(0)
    if flat.size != nx * ny * nz:
        raise VoxelError(f"RLE holds {flat.size} values, dims need {nx * ny * nz}")
    return flat.reshape(nz, ny, nx).transpose(2, 1, 0)


def voxelize(mesh: TriangleMesh, pitch: float = DEFAULT_PITCH, origin=(0.0, 0.0, 0.0),
             nozzle_time: float = DEFAULT_NOZZLE_TIME) -> VoxelModel:
    """Occupy every voxel whose centre lies inside the mesh.

    The lattice is anchored at ``origin``; the returned model covers the
    lattice cells spanning the mesh bounding box, so its own origin is a
    lattice point at or below the box minimum.
    """
    mesh.require_watertight()
    if not pitch > 0:
        raise VoxelError("pitch must be positive")
    origin = np.asarray(origin, dtype=np.float64)
    lo, hi = mesh.bounds
    # Snap bounds within 1e-4 voxel of a lattice plane (STL coordinates are float32).
    eps = 1e-4
    kmin = np.floor((lo - origin) / pitch + eps).astype(int)
    kmax = np.ceil((hi - origin) / pitch - eps).astype(int)
    dims = np.maximum(kmax - kmin, 1)
    base = origin + kmin * pitch
    axes = [base[a] + (np.arange(dims[a]) + 0.5) * pitch for a in range(3)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    occ = contains(centers, mesh).reshape(tuple(dims))
    return VoxelModel(occ, pitch, tuple(base), None, nozzle_time)


@dataclass(frozen=True)
class CompensationPolicy:
    strong_threshold: Optional[float] = None  # mm; None -> 2 * pitch
    moderate_threshold: Optional[float] = None  # mm; None -> 1 * pitch
    strong_removal: int = 2
    moderate_removal: int = 1
    global_shrink: bool = False
    shrink_side: str = "+"  # which end of each axis loses the global layer

    def thresholds(self, pitch: float) -> tuple:
        strong = 2.0 * pitch if self.strong_threshold is None else float(self.strong_threshold)
        moderate = 1.0 * pitch if self.moderate_threshold is None else float(self.moderate_threshold)
        if not strong > moderate > 0:
            raise VoxelError("need strong_threshold > moderate_threshold > 0")
        return strong, moderate

    @classmethod
    def from_dict(cls, d: Mapping) -> "CompensationPolicy":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise VoxelError(f"unknown policy keys: {sorted(unknown)}")
        return cls(**d)


def _axis_slab(model_shape, axis, index):
    sl = [slice(None)] * 3
    sl[axis] = index
    return tuple(sl)


def global_shrink(model: VoxelModel, side: str = "+") -> VoxelModel:
    """Drop one boundary layer of the occupied bounding box along each axis."""
    if model.count == 0:
        raise VoxelError("cannot shrink an empty model")
    occ = model.occupancy.copy()
    idx = np.argwhere(model.occupancy)
    lo, hi = idx.min(axis=0), idx.max(axis=0)
    for a in range(3):
        if lo[a] == hi[a]:
            raise VoxelError(f"global shrink would empty the model along axis {'xyz'[a]}")
        occ[_axis_slab(occ.shape, a, hi[a] if side == "+" else lo[a])] = False
    return model.with_occupancy(occ)


def _column_means(model: VoxelModel, face: FaceLabel, grid: FaceGrid) -> np.ndarray:
    """Mean grid value over each voxel column's footprint on ``face``.

    Returns an array over the two in-plane voxel axes; NaN where no node
    falls within the footprint.
    """
    ua, va = face.uv_axes
    nodes = grid.node_points()
    vals = grid.values
    org = np.asarray(model.origin)
    iu = np.floor((nodes[..., ua] - org[ua]) / model.pitch).astype(int)
    iv = np.floor((nodes[..., va] - org[va]) / model.pitch).astype(int)
    nu, nv = model.dims[ua], model.dims[va]
    ok = (iu >= 0) & (iu < nu) & (iv >= 0) & (iv < nv) & np.isfinite(vals)
    if not np.any((iu >= 0) & (iu < nu) & (iv >= 0) & (iv < nv)):
        raise VoxelError(f"{face.value} grid does not overlap the voxel model footprint")
    total = np.zeros((nu, nv))
    count = np.zeros((nu, nv))
    np.add.at(total, (iu[ok], iv[ok]), vals[ok])
    np.add.at(count, (iu[ok], iv[ok]), 1)
    with np.errstate(invalid="ignore"):
        return total / count


def _outer_layers_mask(occ: np.ndarray, face: FaceLabel, depth: np.ndarray) -> np.ndarray:
    """Mask of the ``depth[u, v]`` outermost occupied voxels of each column facing ``face``."""
    axis = face.axis
    moved = np.moveaxis(occ, axis, -1)  # (.., .., n) with in-plane axes in ascending order
    if face.sign > 0:
        moved = moved[..., ::-1]
    rank = np.cumsum(moved, axis=-1)  # 1 for the outermost occupied voxel, 2 for the next...
    mask = moved & (rank <= depth[..., None])
    if face.sign > 0:
        mask = mask[..., ::-1]
    return np.moveaxis(mask, -1, axis)


def compensate(model: VoxelModel, mean_grids: Mapping, policy: CompensationPolicy = CompensationPolicy()) -> VoxelModel:
    """Remove voxels where the measured mean deviation is systematically positive.

    ``mean_grids`` maps faces to :class:`GridStack` (its mean map is used) or
    :class:`FaceGrid`, in the same world frame as the model. With
    ``policy.global_shrink`` the occupied box first loses one layer per axis.
    Then every column along each face normal loses its outermost
    ``strong_removal`` voxels where its footprint mean reaches the strong
    threshold, or ``moderate_removal`` where it reaches the moderate one.
    All face masks are computed on the same base model, so face order does
    not matter. Never adds voxels.
    """
    if model.count == 0:
        raise VoxelError("cannot compensate an empty model")
    strong, moderate = policy.thresholds(model.pitch)
    base = global_shrink(model, policy.shrink_side) if policy.global_shrink else model
    occ = base.occupancy
    remove = np.zeros_like(occ)
    for key, grid in mean_grids.items():
        face = FaceLabel(key)
        if isinstance(grid, GridStack):
            grid = grid.mean_grid()
        if grid.face != face:
            raise VoxelError(f"grid for {grid.face.value} supplied under key {face.value}")
        mean = _column_means(base, face, grid)
        depth = np.where(mean >= strong, policy.strong_removal,
                         np.where(mean >= moderate, policy.moderate_removal, 0))
        depth = np.where(np.isnan(mean), 0, depth)
        remove |= _outer_layers_mask(occ, face, depth)
    result = occ & ~remove
    if not result.any():
        raise VoxelError("compensation would remove every voxel")
    before = _components(model.occupancy)
    after = _components(result)
    if before == 1 and after > 1:
        warnings.warn(f"compensated model splits into {after} 6-connected parts", ConnectivityWarning, stacklevel=2)
    return base.with_occupancy(result)


def _components(occ: np.ndarray) -> int:
    return int(ndimage.label(occ)[1])


def export_instructions(model: VoxelModel) -> str:
    """Layer-ordered nozzle instructions.

    One block per z-layer (ascending), one line per y-row holding the active
    x nozzle indices sharing a nozzle time::

        layer 0; row 0; 0,1,2; 20
    """
    if model.count == 0:
        raise VoxelError("nothing to print: model is empty")
    nx, ny, nz = model.dims
    lines = [
        "# voxel print instructions",
        f"# dims {nx} {ny} {nz}",
        f"# pitch_mm {model.pitch!r}",
        f"# origin_mm {model.origin[0]!r} {model.origin[1]!r} {model.origin[2]!r}",
    ]
    for k in range(nz):
        lines.append(f"layer {k}")
        for j in range(ny):
            xs = np.flatnonzero(model.occupancy[:, j, k])
            if len(xs) == 0:
                continue
            times = model.nozzle_time[xs, j, k]
            for t in sorted(set(times.tolist())):
                sel = xs[times == t]
                lines.append(f"layer {k}; row {j}; {','.join(map(str, sel))}; {_fmt_time(t)}")
    return "\n".join(lines) + "\n"


def _fmt_time(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def parse_instructions(text: str) -> VoxelModel:
    """Rebuild a model from :func:`export_instructions` output."""
    dims = pitch = origin = None
    entries = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[0] == "dims":
                dims = tuple(int(x) for x in parts[1:4])
            elif parts[0] == "pitch_mm":
                pitch = float(parts[1])
            elif parts[0] == "origin_mm":
                origin = tuple(float(x) for x in parts[1:4])
            continue
        fields = [f.strip() for f in line.split(";")]
        if len(fields) == 1:
            continue  # bare "layer k" block header
        if len(fields) != 4:
            raise VoxelError(f"bad instruction line: {raw!r}")
        k = int(fields[0].split()[1])
        j = int(fields[1].split()[1])
        xs = [int(x) for x in fields[2].split(",") if x]
        entries.append((k, j, xs, float(fields[3])))
    if dims is None or pitch is None:
        raise VoxelError("instruction header lacks dims or pitch")
    occ = np.zeros(dims, dtype=bool)
    nt = np.zeros(dims)
    for k, j, xs, t in entries:
        occ[xs, j, k] = True
        nt[xs, j, k] = t
    default = DEFAULT_NOZZLE_TIME
    if occ.any():
        values, counts = np.unique(nt[occ], return_counts=True)
        default = float(values[np.argmax(counts)])
    nt[~occ] = default
    return VoxelModel(occ, pitch, origin or (0.0, 0.0, 0.0), nt, default)
