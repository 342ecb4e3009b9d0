import numpy as np
import pytest

from pbdev.mechanics import (
    BendingSetup,
    Curve,
    LoadRecord,
    MechanicsError,
    batch_table,
    bending_stress_strain,
    compression_stress_strain,
    fit_young_modulus,
    moving_average,
    nozzle_time_from_name,
    read_curve,
    read_load_record,
)
from pbdev.synthetic import bilinear_curve, curve_tsv


def test_bending_examples():
    c = bending_stress_strain(LoadRecord([0.0, 0.3], [0.0, 1000.0]), BendingSetup(40, 40, 120))
    assert c.stress[1] == pytest.approx(2.8125, abs=1e-12)
    assert c.strain[1] == pytest.approx(0.005, abs=1e-12)
    assert c.stress[0] == 0.0
    d = bending_stress_strain(LoadRecord([0.0, 0.6], [0.0, 2000.0]), BendingSetup(40, 40, 120))
    assert d.stress[1] == 2 * c.stress[1] and d.strain[1] == 2 * c.strain[1]


def test_compression_examples():
    c = compression_stress_strain(LoadRecord([0.0, 40.0], [0.0, 1600.0]), 1600.0, 40.0)
    assert c.stress[1] == 1.0 and c.strain[1] == 1.0
    with pytest.raises(MechanicsError):
        LoadRecord([np.nan], [np.nan]).preprocessed()


def test_preprocessing_drops_bad_rows_and_zeroes():
    r = LoadRecord([0.1, 0.2, np.nan, 0.15, 0.4], [5.0, 6.0, 1.0, 9.0, 8.0]).preprocessed()
    assert np.allclose(r.displacement, [0.0, 0.1, 0.3])
    assert np.allclose(r.force, [0.0, 1.0, 3.0])


def test_exact_line_any_window_position():
    e = np.linspace(0, 0.01, 300)
    fit = fit_young_modulus(Curve(e, 800 * e + 0.1))
    assert fit.young_modulus == pytest.approx(800.0, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)


def test_short_curve_rejected():
    e = np.linspace(0, 0.01, 50)
    with pytest.raises(MechanicsError):
        fit_young_modulus(Curve(e, 800 * e))


def test_bilinear_recovery_and_peak():
    e, s = bilinear_curve(seed=3)
    fit = fit_young_modulus(Curve(e, s))
    assert fit.young_modulus == pytest.approx(796.8, rel=0.02)
    assert fit.window_start + fit.window_len - 1 <= fit.peak_index
    assert fit.peak_index == int(np.argmax(s))


def test_slope_floor_rejects_preload():
    # Long, perfectly straight preload followed by a noisier steep branch.
    e, s = bilinear_curve(n=400, kink_strain=0.004, noise=0.0, seed=1)
    s = s + np.where(e > 0.004, 0.002 * np.sin(e * 1e4), 0.0)
    fit = fit_young_modulus(Curve(e, s))
    assert fit.young_modulus > 600
    no_floor = fit_young_modulus(Curve(e, s), slope_floor=0.0)
    assert no_floor.young_modulus == pytest.approx(200.0, rel=1e-6)


def test_subsampling_stability():
    e, s = bilinear_curve(n=600, noise=0.0, seed=2)
    a = fit_young_modulus(Curve(e, s), window_len=100)
    b = fit_young_modulus(Curve(e[::2], s[::2]), window_len=50)
    assert b.young_modulus == pytest.approx(a.young_modulus, rel=0.03)


def test_moving_average():
    assert np.allclose(moving_average([0, 1, 2], 3), [0.5, 1.0, 1.5])
    assert np.allclose(moving_average([4.0] * 7, 4), 4.0)
    v = np.random.default_rng(0).normal(size=11)
    assert np.array_equal(moving_average(v, 1), v)


def test_tsv_reading(tmp_path):
    e, s = bilinear_curve(seed=4)
    p = tmp_path / "bending_20ms_1.txt"
    p.write_text(curve_tsv(e, s))
    c = read_curve(p)
    assert np.allclose(c.strain, e, atol=1e-9)
    rec = read_load_record("h\nh\nh\nh\n0,0\t0\n0,5\t10\n")
    assert np.allclose(rec.displacement, [0, 0.5])
    with pytest.raises(MechanicsError, match="line 5"):
        read_load_record("h\nh\nh\nh\nabc\t1\n0\t1\n")


def test_nozzle_names_and_batch():
    assert nozzle_time_from_name("bending_20250213_20ms_1.txt") == 20.0
    assert nozzle_time_from_name("specimen.txt") is None
    e = np.linspace(0, 0.01, 200)
    f1 = fit_young_modulus(Curve(e, 800 * e))
    f2 = fit_young_modulus(Curve(e, 900 * e))
    rows = batch_table([(20.0, f1), (20.0, f2), (None, f1)], precision=1).splitlines()
    assert rows[1].startswith("20.0,2,850.0,70.7")
    assert rows[2].startswith(",1,800.0,")
