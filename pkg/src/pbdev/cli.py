"""Command-line front end.

Exit codes: 0 success, 2 completed without ICP convergence, 64 usage,
65 data format, 70 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .deviation import DeviationField, deviation_field
from .dosage import PowderSpec, dosage_table_csv, estimate, read_dosage_csv
from .geometry import (
    DEFAULT_SEED,
    PointCloud,
    ReferencePrism,
    downsample_random,
    load_cloud,
    read_stl,
    sample_mesh_surface,
    sample_reference_surface,
    write_xyz,
)
from .mechanics import (
    BendingSetup,
    batch_table,
    bending_stress_strain,
    compression_stress_strain,
    fit_young_modulus,
    nozzle_time_from_name,
    read_curve,
    read_load_record,
)
from .metrics import MetricsReport, metrics_report, metrics_table
from .projection import FaceGrid, aggregate_grids, project_all_faces, write_stack
from .registration import IcpConfig, RigidTransform, apply_transform, icp_align
from .voxelprep import CompensationPolicy, VoxelModel, compensate, export_instructions, voxelize

log = logging.getLogger("pbdev")

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage} failed: {exc}")
        self.stage = stage
        self.cause = exc


# ---------------------------------------------------------------- helpers

def _round(obj, precision: int):
    if isinstance(obj, float):
        if np.isnan(obj):
            return None
        return round(obj, precision)
    if isinstance(obj, dict):
        return {k: _round(v, precision) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v, precision) for v in obj]
    if isinstance(obj, np.generic):
        return _round(obj.item(), precision)
    return obj


def _write_json(path: Path, obj, precision: int) -> None:
    path.write_text(json.dumps(_round(obj, precision), indent=2, sort_keys=True) + "\n")


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"missing input: {p}")
    return p


def _parse_dims(text: str) -> tuple:
    try:
        dims = tuple(float(x) for x in text.lower().replace("*", "x").split("x"))
    except ValueError:
        raise UsageError(f"bad --reference-dims {text!r}, expected LxWxH") from None
    if len(dims) != 3:
        raise UsageError(f"bad --reference-dims {text!r}, expected LxWxH")
    return dims


def _on_off(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


@dataclass
class Reference:
    prism: ReferencePrism
    mesh: object
    from_stl: bool

    def cloud(self, n: int, seed: int) -> PointCloud:
        if self.from_stl:
            return sample_mesh_surface(self.mesh, n, seed)
        return sample_reference_surface(self.prism, n, seed)


def _reference(args) -> Reference:
    if getattr(args, "reference_stl", None):
        mesh = read_stl(_existing(args.reference_stl))
        mesh.require_watertight()
        lo, hi = mesh.bounds
        return Reference(ReferencePrism(tuple(hi - lo), tuple(lo)), mesh, True)
    prism = ReferencePrism(_parse_dims(args.reference_dims))
    return Reference(prism, prism.to_mesh(), False)


def _load_scan(path) -> PointCloud:
    cloud = load_cloud(_existing(path))
    if len(cloud) == 0:
        raise UsageError(f"scan {path} contains no points")
    return cloud


def _add_reference(p):
    g = p.add_argument_group("reference geometry")
    g.add_argument("--reference-dims", default="159.6x39.9x39.9", metavar="LxWxH",
                   help="ideal prism dimensions in mm, origin at the minimum corner (default %(default)s)")
    g.add_argument("--reference-stl", metavar="FILE", help="watertight reference STL instead of a prism")


def _add_common(p, out_required=True):
    p.add_argument("--out", required=out_required, metavar="DIR", help="output directory")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--precision", type=int, default=4, help="decimals in numeric output (default %(default)s)")


def _add_icp(p):
    p.add_argument("--downsample", type=int, default=50000, metavar="N")
    p.add_argument("--reference-samples", type=int, default=1000, metavar="N",
                   help="random reference surface samples for ICP (corners/vertices are added)")
    p.add_argument("--icp-max-iter", type=int, default=100)
    p.add_argument("--icp-tol", type=float, default=1e-5, help="absolute change in mean squared cost, mm^2")


def _add_metric_opts(p):
    p.add_argument("--metric-samples", type=int, default=50000, metavar="N",
                   help="reference surface samples for Hausdorff/Chamfer (default %(default)s)")


def _add_projection(p):
    p.add_argument("--grid-spacing", type=float, default=1.0)
    p.add_argument("--normal-filter", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--normal-filter-deg", type=float, default=45.0)


# ---------------------------------------------------------------- stages

def run_align(scan: PointCloud, ref: Reference, args) -> tuple:
    source = downsample_random(scan, args.downsample, args.seed)
    target = ref.cloud(args.reference_samples, args.seed)
    result = icp_align(source, target, IcpConfig(args.icp_max_iter, args.icp_tol))
    return result, apply_transform(source, result.transform)


def run_metrics(aligned: PointCloud, ref: Reference, args) -> MetricsReport:
    dense = ref.cloud(args.metric_samples, args.seed)
    return metrics_report(aligned, dense, ref.mesh)


def run_project(fields, ref: Reference, args) -> dict:
    kw = dict(spacing=args.grid_spacing,
              normal_filter_deg=args.normal_filter_deg if args.normal_filter else None)
    per_specimen = [project_all_faces(f, ref.prism, **kw) for f in fields]
    return {face: aggregate_grids([g[face] for g in per_specimen]) for face in per_specimen[0]}


def run_wc(path, args) -> tuple:
    records = read_dosage_csv(_existing(path).read_text())
    powder = PowderSpec(args.density, args.cement_fraction)
    return records, [estimate(r, args.voxel_pitch, powder) for r in records]


def run_mech(paths, args) -> list:
    out = []
    for p in paths:
        p = _existing(p)
        if args.kind == "curve":
            curve = read_curve(p, args.skip, args.strain_percent)
        else:
            rec = read_load_record(p, args.skip).preprocessed()
            if args.kind == "bending":
                if args.width is None or args.height is None:
                    raise UsageError("bending input needs --width and --height")
                curve = bending_stress_strain(rec, BendingSetup(args.width, args.height, args.span))
            else:
                if args.area is None or args.height is None:
                    raise UsageError("compression input needs --area and --height")
                curve = compression_stress_strain(rec, args.area, args.height)
        fit = fit_young_modulus(curve, args.window, args.stride, args.slope_floor)
        out.append((p, nozzle_time_from_name(p.name), fit))
    return out


# ---------------------------------------------------------------- commands

def cmd_align(args) -> int:
    ref = _reference(args)
    scan = _load_scan(args.scan)
    result, aligned = run_align(scan, ref, args)
    out = _outdir(args)
    _write_json(out / "icp.json", result.to_dict(), 12)
    write_xyz(aligned, out / "aligned.xyz")
    status = "converged" if result.converged else "iteration limit reached"
    print(f"ICP {status} after {result.iterations} iterations; mean squared cost "
          f"{result.final_cost:.{args.precision}f} mm^2")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _maybe_transform(cloud: PointCloud, args) -> PointCloud:
    if getattr(args, "transform", None):
        d = json.loads(_existing(args.transform).read_text())
        return apply_transform(cloud, RigidTransform.from_dict(d.get("transform", d)))
    return cloud


def cmd_deviate(args) -> int:
    ref = _reference(args)
    cloud = _maybe_transform(_load_scan(args.scan), args)
    field_ = deviation_field(cloud, ref.mesh, ref.prism)
    out = _outdir(args)
    (out / "deviation.csv").write_text(field_.to_csv(args.precision))
    stats = field_.face_stats()
    _write_json(out / "face_stats.json", stats, args.precision)
    _print_face_stats(stats, args.precision)
    return EXIT_OK


def cmd_metrics(args) -> int:
    ref = _reference(args)
    cloud = _maybe_transform(_load_scan(args.scan), args)
    rep = run_metrics(cloud, ref, args)
    out = _outdir(args)
    _write_json(out / "metrics.json", rep.to_dict(), args.precision)
    (out / "metrics.csv").write_text(metrics_table([(Path(args.scan).stem, rep)], args.precision))
    _print_metrics(rep, args.precision)
    return EXIT_OK


def cmd_project(args) -> int:
    ref = _reference(args)
    fields = [DeviationField.from_csv(_existing(p).read_text()) for p in args.deviation]
    stacks = run_project(fields, ref, args)
    out = _outdir(args)
    written = []
    for stack in stacks.values():
        written += write_stack(stack, out, args.precision)
    print(f"wrote {len(written)} grid files to {out}")
    return EXIT_OK


def cmd_wc(args) -> int:
    records, ests = run_wc(args.dosage, args)
    out = _outdir(args)
    (out / "wc.csv").write_text(dosage_table_csv(records, ests, args.precision))
    _write_json(out / "wc.json", [e.to_dict() for e in ests], args.precision)
    print(dosage_table_csv(records, ests, args.precision), end="")
    return EXIT_OK


def cmd_mech(args) -> int:
    results = run_mech(args.files, args)
    out = _outdir(args)
    for p, t, fit in results:
        _write_json(out / f"mech_{p.stem}.json", {**fit.to_dict(), "nozzle_time_ms": t}, args.precision)
        print(f"{p.name}: E = {fit.young_modulus:.{args.precision}f} MPa, R2 = {fit.r_squared:.{args.precision}f}, "
              f"sigma_max = {fit.peak_stress:.{args.precision}f} MPa")
    (out / "mech_batch.csv").write_text(batch_table([(t, f) for _, t, f in results], args.precision))
    return EXIT_OK


def cmd_slice(args) -> int:
    mesh = read_stl(_existing(args.stl))
    origin = tuple(float(x) for x in args.origin.split(","))
    model = voxelize(mesh, args.pitch, origin, args.nozzle_time)
    out = _outdir(args)
    (out / "voxel_model.json").write_text(model.to_json())
    (out / "instructions.txt").write_text(export_instructions(model))
    print(f"{model.dims[0]}x{model.dims[1]}x{model.dims[2]} grid, {model.count} occupied voxels")
    return EXIT_OK


def _load_policy(args) -> CompensationPolicy:
    d = {}
    if args.policy:
        d = json.loads(_existing(args.policy).read_text())
    if args.global_shrink is not None:
        d["global_shrink"] = args.global_shrink
    return CompensationPolicy.from_dict(d)


def cmd_compensate(args) -> int:
    model = VoxelModel.from_json(_existing(args.model).read_text())
    grid_dir = _existing(args.grids)
    grids = {}
    for p in sorted(grid_dir.glob("*_mean.csv")):
        g = FaceGrid.from_csv(p.read_text())
        grids[g.face] = g
    if not grids:
        raise UsageError(f"no *_mean.csv grid files in {grid_dir}")
    result = compensate(model, grids, _load_policy(args))
    out = _outdir(args)
    (out / "compensated_model.json").write_text(result.to_json())
    (out / "compensated_instructions.txt").write_text(export_instructions(result))
    print(f"{model.count} -> {result.count} voxels; occupied extent {result.occupied_extent()}")
    return EXIT_OK


@dataclass
class JobConfig:
    scans: list = field(default_factory=list)
    dosage: Optional[Path] = None
    mech: list = field(default_factory=list)
    seed: int = DEFAULT_SEED
    out: Optional[Path] = None


def _specimen(scan_path: Path, ref: Reference, args) -> dict:
    name = scan_path.stem
    try:
        scan = _load_scan(scan_path)
    except UsageError:
        raise
    except Exception as exc:
        raise StageError("load", exc) from exc
    try:
        result, aligned = run_align(scan, ref, args)
    except Exception as exc:
        raise StageError("align", exc) from exc
    try:
        field_ = deviation_field(aligned, ref.mesh, ref.prism)
    except Exception as exc:
        raise StageError("deviate", exc) from exc
    try:
        rep = run_metrics(aligned, ref, args)
    except Exception as exc:
        raise StageError("metrics", exc) from exc
    return {"name": name, "icp": result, "aligned": aligned, "field": field_, "metrics": rep}


def _expand_scans(paths) -> list:
    """Scan files in the given order; a directory contributes its .xyz/.stl files sorted by name."""
    out = []
    for p in paths or []:
        p = _existing(p)
        if p.is_dir():
            found = sorted(q for q in p.iterdir() if q.suffix.lower() in (".xyz", ".stl"))
            if not found:
                raise UsageError(f"no scan files in directory {p}")
            out += found
        else:
            out.append(p)
    return out


def cmd_report(args) -> int:
    job = JobConfig(_expand_scans(args.scan), args.dosage and _existing(args.dosage),
                    [_existing(m) for m in args.mech or []], args.seed, Path(args.out))
    if not (job.scans or job.dosage or job.mech):
        raise UsageError("report needs at least one of --scan, --dosage, --mech")
    ref = _reference(args) if job.scans else None
    out = _outdir(args)
    summary: dict = {"seed": job.seed, "version": __version__}
    exit_code = EXIT_OK
    if job.scans:
        with ThreadPoolExecutor(max_workers=min(4, len(job.scans))) as pool:
            specimens = list(pool.map(lambda s: _specimen(s, ref, args), job.scans))
        summary["specimens"] = []
        for sp in specimens:
            name = sp["name"]
            _write_json(out / f"{name}_icp.json", sp["icp"].to_dict(), 12)
            write_xyz(sp["aligned"], out / f"{name}_aligned.xyz")
            (out / f"{name}_deviation.csv").write_text(sp["field"].to_csv(args.precision))
            summary["specimens"].append({
                "name": name,
                "icp": {"converged": sp["icp"].converged, "iterations": sp["icp"].iterations,
                        "final_cost_mm2": sp["icp"].final_cost},
                "face_stats": sp["field"].face_stats(),
                "metrics": sp["metrics"].to_dict(),
            })
            if not sp["icp"].converged:
                exit_code = EXIT_NOT_CONVERGED
        (out / "metrics.csv").write_text(metrics_table([(sp["name"], sp["metrics"]) for sp in specimens],
                                                       args.precision))
        pooled = DeviationField(
            PointCloud(np.vstack([sp["field"].points.points for sp in specimens])),
            np.concatenate([sp["field"].signed_distance for sp in specimens]),
            np.concatenate([sp["field"].face_index for sp in specimens]),
        )
        summary["face_stats"] = pooled.face_stats()
        try:
            stacks = run_project([sp["field"] for sp in specimens], ref, args)
        except Exception as exc:
            raise StageError("project", exc) from exc
        grid_files = []
        for stack in stacks.values():
            grid_files += [p.name for p in write_stack(stack, out, args.precision)]
        summary["grid_files"] = grid_files
    if job.dosage:
        try:
            records, ests = run_wc(job.dosage, args)
        except Exception as exc:
            raise StageError("wc", exc) from exc
        (out / "wc.csv").write_text(dosage_table_csv(records, ests, args.precision))
        summary["wc"] = [e.to_dict() for e in ests]
    if job.mech:
        try:
            results = run_mech(job.mech, args)
        except UsageError:
            raise
        except Exception as exc:
            raise StageError("mech", exc) from exc
        (out / "mech_batch.csv").write_text(batch_table([(t, f) for _, t, f in results], args.precision))
        summary["mech"] = [{"file": p.name, "nozzle_time_ms": t, **f.to_dict()} for p, t, f in results]
    _write_json(out / "summary.json", summary, args.precision)
    if "face_stats" in summary:
        _print_face_stats(summary["face_stats"], args.precision)
    for sp in summary.get("specimens", []):
        print(f"{sp['name']}: " + ", ".join(f"{k}={v:.{args.precision}f}" if isinstance(v, float) else f"{k}={v}"
                                            for k, v in sp["metrics"].items()))
    print(f"report written to {out}")
    return exit_code


def cmd_synth(args) -> int:
    from .synthetic import write_fixture_set

    paths = write_fixture_set(args.out, args.seed, args.points)
    for role, p in paths.items():
        print(f"{role}: {p if not isinstance(p, list) else ' '.join(map(str, p))}")
    return EXIT_OK


# ---------------------------------------------------------------- output

def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_face_stats(stats: dict, precision: int) -> None:
    print(f"{'face':<5} {'n':>8} {'mean':>10} {'std':>10} {'min':>10} {'max':>10}")
    fmt = lambda v: f"{v:>10.{precision}f}" if v is not None else f"{'-':>10}"  # noqa: E731
    for face, s in stats.items():
        print(f"{face:<5} {s['n']:>8} {fmt(s['mean'])} {fmt(s['std'])} {fmt(s['min'])} {fmt(s['max'])}")


def _print_metrics(rep: MetricsReport, precision: int) -> None:
    for k, v in rep.to_dict().items():
        print(f"{k:<14} {v:.{precision}f}" if isinstance(v, float) else f"{k:<14} {v}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbdev", description="Scan-to-CAD deviation analysis and voxel "
                                     "print preparation for powder-bed printed specimens.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="register a scan to the reference (ICP)")
    p.add_argument("--scan", required=True, help="scan as .stl (vertices) or .xyz text")
    _add_reference(p)
    _add_icp(p)
    _add_common(p)
    p.set_defaults(func=cmd_align)

    for name, func, helptext in (("deviate", cmd_deviate, "signed distances and face groups"),
                                 ("metrics", cmd_metrics, "Hausdorff, Chamfer and PAI")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--scan", required=True, help="registered cloud (.xyz/.stl)")
        p.add_argument("--transform", help="icp.json to apply to the scan first")
        _add_reference(p)
        if name == "metrics":
            _add_metric_opts(p)
        _add_common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("project", help="project deviation CSVs onto face grids and aggregate")
    p.add_argument("--deviation", nargs="+", required=True, metavar="CSV")
    _add_reference(p)
    _add_projection(p)
    _add_common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("wc", help="water dosage and water-to-cement estimates")
    p.add_argument("--dosage", required=True, metavar="CSV")
    _add_wc_opts(p)
    _add_common(p)
    p.set_defaults(func=cmd_wc)

    p = sub.add_parser("mech", help="Young's modulus and peak stress from test curves")
    p.add_argument("files", nargs="+")
    _add_mech_opts(p)
    _add_common(p)
    p.set_defaults(func=cmd_mech)

    p = sub.add_parser("slice", help="voxelize an STL and emit print instructions")
    p.add_argument("--stl", required=True)
    p.add_argument("--pitch", type=float, default=5.7)
    p.add_argument("--origin", default="0,0,0", metavar="X,Y,Z")
    p.add_argument("--nozzle-time", type=float, default=20.0, metavar="MS")
    _add_common(p)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("compensate", help="remove voxels where mean deviations are positive")
    p.add_argument("--model", required=True, help="voxel_model.json")
    p.add_argument("--grids", required=True, metavar="DIR", help="directory with *_mean.csv face grids")
    p.add_argument("--policy", metavar="FILE", help="JSON compensation policy")
    p.add_argument("--global-shrink", type=_on_off, default=None, metavar="on|off")
    _add_common(p)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("report", help="run align, deviate, metrics, project, wc and mech in one go")
    p.add_argument("--scan", action="append", metavar="FILE", help="scan file or directory of scans; repeatable")
    p.add_argument("--dosage", metavar="CSV")
    p.add_argument("--mech", nargs="+", metavar="FILE")
    _add_reference(p)
    _add_icp(p)
    _add_metric_opts(p)
    _add_projection(p)
    _add_wc_opts(p)
    _add_mech_opts(p)
    _add_common(p)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic fixture set for trying the pipeline")
    p.add_argument("--points", type=int, default=20000)
    _add_common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def _add_wc_opts(p):
    p.add_argument("--voxel-pitch", type=float, default=5.7)
    p.add_argument("--density", type=float, default=1695.0, help="powder bulk density, kg/m^3")
    p.add_argument("--cement-fraction", type=float, default=0.25)


def _add_mech_opts(p):
    p.add_argument("--kind", choices=("curve", "bending", "compression"), default="curve",
                   help="curve: strain/stress columns; bending/compression: displacement mm / force N")
    p.add_argument("--skip", type=int, default=4, help="header lines to skip")
    p.add_argument("--strain-percent", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--window", type=int, default=100)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--slope-floor", type=float, default=0.5)
    p.add_argument("--width", type=float, help="specimen width b, mm")
    p.add_argument("--height", type=float, help="specimen height h, mm")
    p.add_argument("--span", type=float, default=120.0)
    p.add_argument("--area", type=float, help="compression cross-section, mm^2")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pbdev {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"pbdev {args.command}: {exc}", file=sys.stderr)
        if isinstance(exc.cause, UsageError):
            return EXIT_USAGE
        return EXIT_DATA if isinstance(exc.cause, ValueError) else EXIT_INTERNAL
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"pbdev {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - last resort
        log.debug("internal error", exc_info=True)
        print(f"pbdev {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
