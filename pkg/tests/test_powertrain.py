import numpy as np
import pytest

from h2rail.powertrain import (G_STANDARD, BatteryDomainError, BatteryParams, FitError, FuelCellMap, MapRangeError,
                               MotorMap, ParameterError, SurrogateFits, TrainParams, default_fuelcell_map,
                               default_motor_map, depletion_rate, exact_fuel_rate, exact_soc_rate, external_force,
                               fit_all, fit_fuelcell_linear, fit_motor_quadratic, fit_soc_quadratic, kinetic_step,
                               load_fuelcell_map, load_motor_map, load_params, params_to_toml,
                               soc_power_from_depletion, write_fuelcell_map, write_motor_map)

P = TrainParams()
B = BatteryParams()


def test_table_parameters():
    assert P.m == 183_000 and P.lam == 0.0625
    assert P.m_eq == pytest.approx(194_437.5)
    assert (P.a, P.b, P.c) == (1743, 76.4, 6.2)
    assert P.g == G_STANDARD == 9.80665
    assert (P.p_aux, P.n_fc, P.p_fc_min, P.p_fc_max) == (100e3, 4, 6e3, 100e3)
    assert (P.f_m_min, P.f_m_max, P.p_m_min, P.p_m_max, P.f_brk_min) == (-87e3, 87e3, -585e3, 585e3, -180e3)
    assert (B.r, B.q_wh, B.p_min, B.p_max) == (0.0885, 220e3, -600e3, 600e3)
    assert (B.soc_min, B.soc_max, B.soc0) == (20, 80, 50)
    assert B.q_ah == pytest.approx(366.6667, rel=1e-6)


def test_external_force_examples():
    assert external_force(0.0, 0.0, P) == pytest.approx(1743)
    assert external_force(20.0, 0.0, P) == pytest.approx(5751)
    assert external_force(0.0, np.arcsin(0.01), P) == pytest.approx(19_689.1695, abs=1e-3)


def test_kinetic_step_examples():
    assert kinetic_step(37.0, 0.0, 0.0, 0.0, 10.0, P) == 37.0
    assert kinetic_step(400.0, 87_000, 0.0, 5751, 10.0, P) == pytest.approx(408.357338476374, rel=1e-12)
    assert kinetic_step(100.0, 0.0, -180_000, 0.0, 10.0, P) == pytest.approx(81.4850530376085, rel=1e-12)


def test_exact_soc_rate_examples():
    assert exact_soc_rate(0.0, B) == 0.0
    p_peak = B.u_oc**2 / (4 * B.r)
    assert exact_soc_rate(p_peak, B) == pytest.approx(-B.u_oc / (2 * B.r) / (3600 * B.q_ah) * 100)
    # 300 kW: I = 543.5838 A drawn from 366.67 Ah
    assert exact_soc_rate(300e3, B) == pytest.approx(-0.0411805903473720, rel=1e-12)


def test_soc_rate_domain_error():
    with pytest.raises(BatteryDomainError):
        exact_soc_rate(B.u_oc**2 / (4 * B.r) * 1.01, B)


def test_soc_power_inversion():
    p = np.linspace(-600e3, 600e3, 41)
    assert np.allclose(soc_power_from_depletion(depletion_rate(p, B), B), p, rtol=0, atol=1e-6)


def test_battery_rejects_power_beyond_voltage():
    with pytest.raises(ParameterError):
        BatteryParams(p_max=2e6)


def test_train_rejects_idle_fuel_cell():
    with pytest.raises(ParameterError):
        TrainParams(p_fc_min=0.0)


def test_exact_fuel_rate():
    fm = FuelCellMap(np.array([1e3, 100e3]), np.array([0.5, 0.5]))
    assert exact_fuel_rate(1000.0, 100.0, fm) == pytest.approx(2000.0)
    ideal = FuelCellMap(np.array([1e3, 100e3]), np.array([1.0, 1.0]))
    assert exact_fuel_rate(1234.0, 49.0, ideal) == pytest.approx(1234.0)


def test_exact_fuel_rate_hand_interpolation():
    fm = default_fuelcell_map(P)
    i = 20
    p = 0.25 * fm.power[i] + 0.75 * fm.power[i + 1]
    eta = 0.25 * fm.eta[i] + 0.75 * fm.eta[i + 1]
    v = 12.0
    assert exact_fuel_rate(p / v, v * v, fm) == pytest.approx(p / v / eta, rel=1e-12)


def test_fuel_cell_map_range():
    with pytest.raises(MapRangeError):
        default_fuelcell_map(P).efficiency(200e3)


def test_map_validation():
    with pytest.raises(ParameterError):
        FuelCellMap(np.array([1.0, 2.0]), np.array([0.5, 1.2]))
    with pytest.raises(ParameterError):
        MotorMap(np.array([-1.0, 1.0]), np.array([1.0, 2.0]), np.full((2, 2), 1.1))
    with pytest.raises(ParameterError):
        FuelCellMap(np.array([2.0, 1.0]), np.array([0.5, 0.5]))


def test_default_motor_map_shape():
    mm = default_motor_map(P)
    assert mm.eta.max() == pytest.approx(0.917, abs=0.005)
    F, V = np.meshgrid(mm.force, mm.speed, indexing="ij")
    inside = np.abs(F * V) <= P.p_m_max
    edge = inside & (np.abs(F) == np.abs(mm.force).max()) & (V <= 5)
    # the force-limit edge sits around 0.8; light-load corners drop much lower
    assert np.all(mm.eta[edge] > 0.75) and np.all(mm.eta[edge] < 0.85)


def test_default_fuel_cell_curve():
    fm = default_fuelcell_map(P)
    k = int(np.argmax(fm.eta))
    assert fm.eta[k] == pytest.approx(0.55, abs=1e-3)
    assert fm.power[k] / P.p_fc_max == pytest.approx(0.3, abs=0.02)
    assert fm.eta[0] == pytest.approx(0.52) and fm.eta[-1] == pytest.approx(0.52)


def quadratic_map(coef):
    p00, p10, p01, p11, p20, p02 = coef
    f = np.linspace(-87e3, 87e3, 30)
    f = f[np.abs(f) > 2000]
    v = np.linspace(0.5, 40, 30)
    F, V = np.meshgrid(f, v, indexing="ij")
    Z = V * V
    q = p00 + p10 * Z + p01 * F + p11 * F * Z + p20 * Z * Z + p02 * F * F
    eta = np.where(F > 0, F / q, q / F)
    return MotorMap(f, v, eta)


def test_motor_fit_recovers_convex_quadratic():
    coef = (400.0, 0.1, 1.0, 1e-7, 1e-4, 1e-6)
    fit = fit_motor_quadratic(quadratic_map(coef), P)
    assert np.allclose(fit.coeffs, coef, rtol=1e-9, atol=0)
    assert not fit.constrained


def test_motor_fit_lossless():
    mm = MotorMap(np.linspace(-87e3, 87e3, 20), np.linspace(0.5, 40, 20), np.ones((20, 20)))
    fit = fit_motor_quadratic(mm, P)
    assert fit.p01 == pytest.approx(1.0, abs=1e-9)
    assert np.allclose([fit.p00 / 87e3, fit.p10, fit.p11, fit.p20, fit.p02], 0, atol=1e-9)


def test_motor_fit_rank_deficient():
    with pytest.raises(FitError):
        fit_motor_quadratic(None, P, samples=(np.ones(10), np.ones(10), np.ones(10)))


def test_default_motor_fit_quality_and_certificate():
    fit = fit_motor_quadratic(default_motor_map(P), P)
    assert fit.stats.max_rel <= 0.03
    H = fit.hessian_form()
    assert np.linalg.eigvalsh(H / np.abs(H).max()).min() >= -1e-12
    assert fit.p20 >= 0 and fit.p02 >= 0 and 4 * fit.p20 * fit.p02 >= fit.p11**2


def test_fuel_cell_fit_constant_efficiency():
    fm = FuelCellMap(np.linspace(6e3, 100e3, 10), np.full(10, 0.5))
    fit = fit_fuelcell_linear(fm, (0.5, 40.0), P)
    assert fit.p0 == pytest.approx(2.0, rel=1e-12)
    assert fit.p1 == pytest.approx(0.0, abs=1e-12)


def test_fuel_cell_fit_quality():
    fit = fit_fuelcell_linear(default_fuelcell_map(P), (0.5, 40.0), P)
    assert fit.stats.max_rel <= 0.05
    assert fit.p0 > 0


def test_fuel_cell_fit_rejects_bad_range():
    with pytest.raises(FitError):
        fit_fuelcell_linear(default_fuelcell_map(P), (0.0, 40.0), P)


def test_soc_fit_small_resistance_limit():
    b = BatteryParams(r=1e-9)
    fit = fit_soc_quadratic(b, method="lstsq")
    assert fit.beta == pytest.approx(100 / (b.u_oc * 3600 * b.q_ah), rel=1e-6)
    assert abs(fit.alpha) * 600e3 < 1e-6 * fit.beta


def test_soc_fit_has_no_intercept():
    fit = fit_soc_quadratic(B)
    assert fit(0.0) == 0.0


@pytest.mark.parametrize("method", ["minimax", "lstsq"])
def test_soc_fit_quality(method):
    fit = fit_soc_quadratic(B, method=method)
    assert fit.alpha > 0 and fit.beta > 0
    assert fit.stats.max_rel <= (0.02 if method == "minimax" else 0.03)


def test_soc_fit_minimax_beats_least_squares():
    assert fit_soc_quadratic(B, method="minimax").stats.max_rel < fit_soc_quadratic(B, method="lstsq").stats.max_rel


def test_soc_fit_degenerate_range():
    with pytest.raises(FitError):
        fit_soc_quadratic(B, (1e3, 1e3))


def test_fit_residual_self_consistency():
    mm = default_motor_map(P)
    fit = fit_motor_quadratic(mm, P)
    from h2rail.powertrain import motor_fit_samples
    f, z, y = motor_fit_samples(mm, P)
    rel = np.abs(fit(f, z) - y) / np.maximum(np.abs(y), 0.05 * np.abs(y).max())
    assert rel.max() <= fit.stats.max_rel * (1 + 1e-12)


def test_fits_are_deterministic():
    a = fit_all(P, B, default_motor_map(P), default_fuelcell_map(P))
    b = fit_all(P, B, default_motor_map(P), default_fuelcell_map(P))
    assert a.to_dict() == b.to_dict()
    assert SurrogateFits.from_dict(a.to_dict()) == a


def test_map_csv_round_trip(tmp_path):
    mm, fm = default_motor_map(P), default_fuelcell_map(P)
    write_motor_map(mm, tmp_path / "m.csv")
    write_fuelcell_map(fm, tmp_path / "f.csv")
    m2, f2 = load_motor_map(tmp_path / "m.csv"), load_fuelcell_map(tmp_path / "f.csv")
    assert np.array_equal(m2.eta, mm.eta) and np.array_equal(f2.eta, fm.eta)


def test_map_with_efficiency_above_one(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("power_w,eta\n6000,0.5\n100000,1.2\n")
    with pytest.raises(ParameterError):
        load_fuelcell_map(p)


def test_params_toml_round_trip(tmp_path):
    p = tmp_path / "params.toml"
    custom = TrainParams(m=150e3, n_fc=3)
    p.write_text(params_to_toml(custom, BatteryParams(u_oc=700.0)))
    t, b = load_params(p)
    assert t == custom and b.u_oc == 700.0


def test_params_unknown_key(tmp_path):
    p = tmp_path / "params.toml"
    p.write_text("[vehicle]\nmass = 1\n")
    with pytest.raises(ParameterError, match="vehicle.mass"):
        load_params(p)
