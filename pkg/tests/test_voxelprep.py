import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbdev.deviation import FACES, FaceLabel
from pbdev.geometry import ReferencePrism, box_mesh, icosphere
from pbdev.projection import FaceGrid, aggregate_grids
from pbdev.voxelprep import (
    CompensationPolicy,
    ConnectivityWarning,
    VoxelError,
    VoxelModel,
    compensate,
    export_instructions,
    global_shrink,
    parse_instructions,
    rle_decode,
    rle_encode,
    voxelize,
)


def uniform_grids(prism, value, spacing=1.0):
    from pbdev.projection import node_coordinates

    out = {}
    for f in FACES:
        ua, va = f.uv_axes
        shape = (len(node_coordinates(prism.dims[ua], spacing)), len(node_coordinates(prism.dims[va], spacing)))
        out[f] = FaceGrid(f, spacing, np.full(shape, float(value)), prism)
    return out


@pytest.fixture(scope="module")
def nominal():
    return voxelize(ReferencePrism().to_mesh(), 5.7)


def test_nominal_prism(nominal):
    assert nominal.dims == (28, 7, 7) and nominal.count == 1372


def test_tiny_box_one_voxel():
    m = box_mesh((2, 2, 2), (5.7 * 3 + 1.85, 5.7 + 1.85, 1.85))
    assert voxelize(m, 5.7).count == 1


def test_sphere_count():
    # Centred on a lattice corner, so voxel centres sit symmetrically around it.
    m = icosphere(11.4, 3, center=(17.1, 17.1, 17.1))
    n = voxelize(m, 5.7).count
    assert abs(n - 4 / 3 * np.pi * 8) <= 0.15 * 4 / 3 * np.pi * 8


def test_translation_consistency():
    m = icosphere(9.0, 2, center=(20.0, 21.0, 19.0))
    a = voxelize(m, 5.7)
    b = voxelize(m.transformed(np.eye(3), np.array([2, -1, 3]) * 5.7), 5.7)
    assert np.array_equal(a.occupancy, b.occupancy)
    assert np.allclose(np.array(b.origin) - a.origin, np.array([2, -1, 3]) * 5.7)


def test_global_shrink(nominal):
    s = global_shrink(nominal)
    assert s.occupied_extent() == (27, 6, 6) and s.count == 27 * 36
    assert s.occupancy[:27, :6, :6].all()
    lo = global_shrink(nominal, "-")
    assert not lo.occupancy[0].any() and lo.occupancy[27].any()


def test_compensation_uniform_strong_with_shrink(nominal):
    prism = ReferencePrism()
    out = compensate(nominal, uniform_grids(prism, 13.0), CompensationPolicy(global_shrink=True))
    assert out.occupied_extent() == (23, 2, 2) and out.count == 92
    idx = np.argwhere(out.occupancy)
    assert idx.min(axis=0).tolist() == [2, 2, 2] and idx.max(axis=0).tolist() == [24, 3, 3]


def test_compensation_moderate_and_noop(nominal):
    prism = ReferencePrism()
    out = compensate(nominal, uniform_grids(prism, 6.0))
    assert out.occupied_extent() == (26, 5, 5)
    same = compensate(nominal, uniform_grids(prism, 0.0))
    assert np.array_equal(same.occupancy, nominal.occupancy)


def test_compensation_accepts_stacks_and_local_patch(nominal):
    prism = ReferencePrism()
    grids = uniform_grids(prism, 0.0)
    vals = grids[FaceLabel.PY].values.copy()
    vals[:12, :] = 20.0  # strong bulge over the first two voxel columns in x
    grids[FaceLabel.PY] = aggregate_grids([FaceGrid(FaceLabel.PY, 1.0, vals, prism)] * 2)
    out = compensate(nominal, grids)
    assert out.count == 1372 - 2 * 7 * 2
    assert not out.occupancy[:2, 5:, :].any() and out.occupancy[2:, 5:, :].all()


def test_missing_grid_values_leave_columns(nominal):
    prism = ReferencePrism()
    grids = uniform_grids(prism, 13.0)
    grids = {FaceLabel.PZ: FaceGrid(FaceLabel.PZ, 1.0, np.full_like(grids[FaceLabel.PZ].values, np.nan), prism)}
    assert compensate(nominal, grids).count == 1372


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_never_adds_voxels(seed):
    rng = np.random.default_rng(seed)
    prism = ReferencePrism()
    model = voxelize(prism.to_mesh(), 5.7)
    occ = model.occupancy & (rng.random(model.occupancy.shape) > 0.1)
    model = model.with_occupancy(occ)
    grids = uniform_grids(prism, 0.0)
    for f in FACES:
        grids[f] = FaceGrid(f, 1.0, rng.uniform(-5, 15, grids[f].values.shape), prism)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConnectivityWarning)
        try:
            out = compensate(model, grids, CompensationPolicy(global_shrink=bool(seed % 2)))
        except VoxelError:
            return
    assert not np.any(out.occupancy & ~model.occupancy)


def test_connectivity_warning():
    from pbdev.projection import node_coordinates

    model = VoxelModel(np.ones((5, 1, 1), bool), 5.7, (0, 0, 0))
    prism = ReferencePrism((5 * 5.7, 5.7, 5.7))
    u = node_coordinates(5 * 5.7, 1.0)
    vals = np.zeros((len(u), len(node_coordinates(5.7, 1.0))))
    vals[(u > 2 * 5.7) & (u < 3 * 5.7), :] = 30.0  # strong bulge over the middle column only
    with pytest.warns(ConnectivityWarning):
        out = compensate(model, {FaceLabel.PY: FaceGrid(FaceLabel.PY, 1.0, vals, prism)})
    assert out.occupancy[:, 0, 0].tolist() == [True, True, False, True, True]


def test_empty_result_rejected(nominal):
    with pytest.raises(VoxelError):
        compensate(nominal, uniform_grids(ReferencePrism(), 100.0), CompensationPolicy(strong_removal=50))


def test_policy():
    assert CompensationPolicy().thresholds(5.7) == (11.4, 5.7)
    with pytest.raises(VoxelError):
        CompensationPolicy(strong_threshold=1, moderate_threshold=2).thresholds(5.7)
    with pytest.raises(VoxelError):
        CompensationPolicy.from_dict({"bogus": 1})
    assert CompensationPolicy.from_dict({"global_shrink": True}).global_shrink


def test_instructions(nominal):
    text = export_instructions(nominal)
    data = [l for l in text.splitlines() if l.count(";") == 3]
    assert len(data) == 49
    assert all(l.split(";")[2].strip() == ",".join(map(str, range(28))) for l in data)
    back = parse_instructions(text)
    assert np.array_equal(back.occupancy, nominal.occupancy) and back.pitch == 5.7


def test_instructions_single_voxel_and_hole():
    one = VoxelModel(np.ones((1, 1, 1), bool), 5.7, (0, 0, 0))
    lines = [l for l in export_instructions(one).splitlines() if not l.startswith("#")]
    assert lines == ["layer 0", "layer 0; row 0; 0; 20"]
    occ = np.ones((4, 1, 1), bool)
    occ[2] = False
    t = export_instructions(VoxelModel(occ, 5.7, (0, 0, 0)))
    assert "layer 0; row 0; 0,1,3; 20" in t


def test_mixed_nozzle_times_roundtrip():
    occ = np.ones((3, 2, 2), bool)
    nt = np.full(occ.shape, 20.0)
    nt[0] = 11.0
    m = VoxelModel(occ, 5.7, (1.0, 2.0, 3.0), nt)
    back = parse_instructions(export_instructions(m))
    assert np.array_equal(back.nozzle_time, nt) and back.origin == (1.0, 2.0, 3.0)


def test_json_and_rle(nominal):
    occ = np.random.default_rng(1).random((4, 3, 2)) > 0.5
    assert np.array_equal(rle_decode(rle_encode(occ), occ.shape), occ)
    back = VoxelModel.from_json(nominal.to_json())
    assert np.array_equal(back.occupancy, nominal.occupancy) and back.pitch == nominal.pitch
