import json
import subprocess
import sys

import numpy as np
import pytest

from pbdev.cli import main

FAST = ["--metric-samples", "5000"]


def _bundle(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_align_converges_and_is_deterministic(fixture_set, tmp_path):
    scan = str(fixture_set["scans"][0])
    assert main(["align", "--scan", scan, "--out", str(tmp_path / "a")]) == 0
    assert main(["align", "--scan", scan, "--out", str(tmp_path / "b")]) == 0
    assert _bundle(tmp_path / "a") == _bundle(tmp_path / "b")
    icp = json.loads((tmp_path / "a" / "icp.json").read_text())
    assert icp["converged"] and icp["iterations"] <= 100
    assert len(icp["transform"]["R"]) == 9


def test_align_not_converged_exit_2(fixture_set, tmp_path):
    rc = main(["align", "--scan", str(fixture_set["scans"][0]), "--icp-max-iter", "1", "--out", str(tmp_path)])
    assert rc == 2


def test_usage_errors(tmp_path, capsys):
    empty = tmp_path / "empty.xyz"
    empty.write_text("")
    assert main(["align", "--scan", str(empty), "--out", str(tmp_path)]) == 64
    assert main(["align", "--scan", str(tmp_path / "nope.xyz"), "--out", str(tmp_path)]) == 64
    assert "nope.xyz" in capsys.readouterr().err
    assert main(["nonsense"]) == 64
    assert main(["align", "--out", str(tmp_path)]) == 64


def test_data_format_error(tmp_path, capsys):
    bad = tmp_path / "bad.stl"
    bad.write_bytes(b"solid x\nfacet normal 0 0 1\n")
    assert main(["slice", "--stl", str(bad), "--out", str(tmp_path)]) == 65
    assert "truncated" in capsys.readouterr().err


def test_missing_reference_named(fixture_set, tmp_path, capsys):
    rc = main(["report", "--scan", str(fixture_set["scans"][0]), "--reference-stl", str(tmp_path / "ref.stl"),
               "--out", str(tmp_path / "o")])
    assert rc == 64
    assert "ref.stl" in capsys.readouterr().err


def test_report_full_bundle(fixture_set, tmp_path):
    out = tmp_path / "rep"
    args = ["report", *sum((["--scan", str(s)] for s in fixture_set["scans"]), []),
            "--reference-stl", str(fixture_set["reference_stl"]), "--dosage", str(fixture_set["dosage"]),
            "--mech", *map(str, fixture_set["curves"]), "--out", str(out), *FAST]
    assert main(args) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 42
    assert len(summary["face_stats"]) == 6
    for sp in summary["specimens"]:
        assert {"hausdorff_mm", "chamfer_mm", "pai"} <= set(sp["metrics"])
        assert sp["metrics"]["pai"] > 1.0
    grids = sorted(p.name for p in out.glob("grid_*.csv"))
    assert len(grids) == 12
    assert (out / "wc.csv").exists() and (out / "mech_batch.csv").exists()
    assert len(summary["wc"]) == 7 and len(summary["mech"]) == 3


def test_report_directory_of_scans(fixture_set, tmp_path):
    d = tmp_path / "scans"
    d.mkdir()
    for s in fixture_set["scans"]:
        (d / s.name).write_bytes(s.read_bytes())
    assert main(["report", "--scan", str(d), "--out", str(tmp_path / "o"), *FAST]) == 0
    names = [sp["name"] for sp in json.loads((tmp_path / "o" / "summary.json").read_text())["specimens"]]
    assert names == sorted(names) and len(names) == 2


def test_wc_only_bundle(fixture_set, tmp_path):
    out = tmp_path / "wc"
    assert main(["report", "--dosage", str(fixture_set["dosage"]), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["summary.json", "wc.csv"]
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"seed", "version", "wc"}


def test_stage_tagged_failure(tmp_path, capsys):
    bad = tmp_path / "dosage.csv"
    bad.write_text("nozzle_time_ms\n11\n")
    assert main(["report", "--dosage", str(bad), "--out", str(tmp_path / "o")]) == 65
    assert "stage wc failed" in capsys.readouterr().err


def test_pipeline_commands(fixture_set, tmp_path):
    o = tmp_path
    scan = str(fixture_set["scans"][1])
    assert main(["align", "--scan", scan, "--out", str(o)]) == 0
    assert main(["deviate", "--scan", str(o / "aligned.xyz"), "--out", str(o)]) == 0
    assert main(["metrics", "--scan", str(o / "aligned.xyz"), "--out", str(o), *FAST]) == 0
    assert main(["project", "--deviation", str(o / "deviation.csv"), "--out", str(o / "g")]) == 0
    assert len(list((o / "g").glob("*.csv"))) == 12
    assert main(["slice", "--stl", str(fixture_set["reference_stl"]), "--out", str(o)]) == 0
    model = json.loads((o / "voxel_model.json").read_text())
    assert model["dims"] == [28, 7, 7]
    assert main(["compensate", "--model", str(o / "voxel_model.json"), "--grids", str(o / "g"),
                 "--global-shrink", "on", "--out", str(o)]) == 0
    assert "# dims 28 7 7" in (o / "compensated_instructions.txt").read_text()
    # Raw scan plus its transform gives the same deviation file.
    assert main(["deviate", "--scan", scan, "--transform", str(o / "icp.json"), "--out", str(o / "d2")]) == 0
    a = np.loadtxt(o / "deviation.csv", delimiter=",", skiprows=1, usecols=3)
    b = np.loadtxt(o / "d2" / "deviation.csv", delimiter=",", skiprows=1, usecols=3)
    assert a.shape == b.shape and np.allclose(a, b, atol=2e-4)


def test_wc_and_mech_commands(fixture_set, tmp_path, capsys):
    assert main(["wc", "--dosage", str(fixture_set["dosage"]), "--out", str(tmp_path)]) == 0
    assert "40.5014" in capsys.readouterr().out
    assert main(["mech", *map(str, fixture_set["curves"]), "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "mech_batch.csv").read_text().splitlines()
    assert rows[1].startswith("20.0000,2,") and rows[2].startswith("30.0000,1,")
    assert main(["mech", "--kind", "bending", str(fixture_set["curves"][0]), "--out", str(tmp_path)]) == 64


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "pbdev", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "pbdev" in r.stdout
