"""Trap model and calibration tests."""

import math

import numpy as np
import pytest

from meltlab.errors import NoSolution, UnstableTrap
from meltlab.trap import (
    BA137,
    BA138,
    IonSpecies,
    TrapModel,
    axis_secular_frequency,
    default_calibration,
    fit_calibration,
    get_species,
    is_stable,
    load_calibration,
    mathieu_for_species,
    save_calibration,
    secular_frequencies,
    symmetric_locus,
    symmetric_vdc,
    trap_from_frequencies,
    vdc_for_ratio,
    vrf_for_qy,
)

OMEGA_RF = 2 * math.pi * 4.7e6


def test_axis_frequency_pure_rf():
    # oracle: omega = (Omega/2) |q| / sqrt(2) for a = 0
    q = -0.182
    expected = OMEGA_RF / 2 * abs(q) / math.sqrt(2)
    got = axis_secular_frequency(OMEGA_RF, 0.0, q)
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(2 * math.pi * 302.4e3, rel=1e-3)


def test_zero_radicand_axis_is_zero_and_trap_level_flags_unstable():
    assert axis_secular_frequency(OMEGA_RF, 0.0, 0.0) == 0.0
    trap = TrapModel(OMEGA_RF, a=(0.0, 0.0, 0.0), q=(0.182, -0.182, 0.0), reference_mass_u=138.0)
    with pytest.raises(UnstableTrap):
        secular_frequencies(trap, BA138)


def test_negative_radicand_raises():
    with pytest.raises(UnstableTrap):
        axis_secular_frequency(OMEGA_RF, -0.1, 0.0)
    trap = TrapModel(OMEGA_RF, a=(0.01, -0.02, 0.002), q=(0.182, -0.182, 0.0), reference_mass_u=138.0)
    with pytest.raises(UnstableTrap):
        secular_frequencies(trap, BA138)


def test_trap_model_validation():
    with pytest.raises(ValueError):
        TrapModel(OMEGA_RF, a=(0.0, 0.0, 0.001), q=(0.18, -0.17, 0.0), reference_mass_u=138.0)
    with pytest.raises(ValueError):
        TrapModel(OMEGA_RF, a=(0.0, 0.0, 0.001), q=(0.18, -0.18, 0.05), reference_mass_u=138.0)


def test_is_stable_examples():
    trap = TrapModel(OMEGA_RF, a=(0.01, 0.01, 0.02), q=(0.182, -0.182, 0.0), reference_mass_u=138.0)
    assert is_stable(trap, BA138)
    # boundary is excluded: a_y = -q_y^2/2 exactly
    qy = -0.182
    trap2 = TrapModel(
        OMEGA_RF, a=(0.01, -(qy**2) / 2, 0.02), q=(-qy, qy, 0.0), reference_mass_u=138.0
    )
    assert not is_stable(trap2, BA138)


def test_stability_is_per_species():
    # stable for the reference mass, unstable for a much heavier ion whose
    # q-driven confinement shrinks quadratically while a shrinks linearly
    trap = TrapModel(OMEGA_RF, a=(0.01, -0.013, 0.0017), q=(0.182, -0.182, 0.0), reference_mass_u=138.0)
    assert is_stable(trap, BA138)
    heavy = IonSpecies(mass_u=1000.0, label="heavy")
    assert not is_stable(trap, heavy)
    with pytest.raises(UnstableTrap):
        secular_frequencies(trap, heavy)


def test_mass_scaling_identity():
    # m * omega_l^2 derived from mass-independent A = m a and Q = m q is exact
    cal = default_calibration()
    v_dc, v_rf = -12.0, 802.0
    t138 = mathieu_for_species(cal, v_dc, v_rf, BA138)
    t137 = mathieu_for_species(cal, v_dc, v_rf, BA137)
    w138 = np.array(secular_frequencies(t138, BA138))
    w137 = np.array(secular_frequencies(t137, BA137))
    a_big = np.array(t138.a) * 138.0
    q_big = np.array(t138.q) * 138.0
    for m, w in ((138.0, w138), (137.0, w137)):
        lhs = m * w**2
        rhs = (cal.omega_rf / 2) ** 2 * (a_big + q_big**2 / (2 * m))
        assert np.allclose(lhs, rhs, rtol=1e-12)


def test_mathieu_for_species_inverse_mass():
    cal = default_calibration()
    t138 = mathieu_for_species(cal, -12.9, 802.0, BA138)
    t137 = mathieu_for_species(cal, -12.9, 802.0, BA137)
    assert np.allclose(np.array(t137.a), np.array(t138.a) * 138.0 / 137.0, rtol=1e-14)
    assert np.allclose(np.array(t137.q), np.array(t138.q) * 138.0 / 137.0, rtol=1e-14)


def test_default_calibration_qy_anchor():
    cal = default_calibration()
    q = cal.q_vector(802.0, 138.0)
    assert q[1] == pytest.approx(-0.182, abs=1e-12)
    assert q[0] == -q[1]
    assert q[2] == 0.0


def test_default_calibration_ratio_point():
    cal = default_calibration()
    v_rf = vrf_for_qy(cal, BA138, -0.182)
    assert v_rf == pytest.approx(802.0, rel=1e-12)
    v_dc = vdc_for_ratio(cal, BA138, 1.18, v_rf)
    trap = mathieu_for_species(cal, v_dc, v_rf, BA138)
    f = np.array(secular_frequencies(trap, BA138)) / (2 * math.pi)
    target = np.array([401e3, 116e3, 98e3])
    assert np.all(np.abs(f - target) / target < 0.02)


def test_default_calibration_symmetric_point():
    cal = default_calibration()
    trap = mathieu_for_species(cal, -12.9, 802.0, BA138)
    _, wy, wz = secular_frequencies(trap, BA138)
    assert wy / wz == pytest.approx(1.0, abs=0.04)
    v_sym = symmetric_vdc(cal, BA138, 802.0)
    assert v_sym == pytest.approx(-12.9, abs=0.2)


def test_lighter_isotope_sees_stiffer_y():
    # in a trap symmetric for 138, the lighter isotope has omega_y/omega_z > 1
    cal = default_calibration()
    v_sym = symmetric_vdc(cal, BA138, 802.0)
    trap = mathieu_for_species(cal, v_sym, 802.0, BA138)
    _, wy, wz = secular_frequencies(trap, BA137)
    assert wy / wz > 1.0


def test_secular_frequency_monotone_in_qy():
    a = (0.01, -0.001, 0.002)
    last = 0.0
    for qy in (-0.05, -0.1, -0.182, -0.3, -0.5):
        trap = TrapModel(OMEGA_RF, a=a, q=(-qy, qy, 0.0), reference_mass_u=138.0)
        _, wy, _ = secular_frequencies(trap, BA138)
        assert wy > last
        last = wy


def test_symmetric_locus_basics():
    cal = default_calibration()
    assert symmetric_locus(cal, BA138, []) == []
    pts = symmetric_locus(cal, BA138, [-0.1, -0.182, -0.4])
    assert len(pts) == 3
    for a_y, q_y in pts:
        v_rf = vrf_for_qy(cal, BA138, q_y)
        v_dc = symmetric_vdc(cal, BA138, v_rf)
        trap = mathieu_for_species(cal, v_dc, v_rf, BA138)
        assert is_stable(trap, BA138)
        _, wy, wz = secular_frequencies(trap, BA138)
        assert wy / wz == pytest.approx(1.0, abs=1e-9)
        assert a_y == pytest.approx(trap.a[1], rel=1e-12)


def test_symmetric_locus_mass_vrf_rescaling_invariance():
    cal = default_calibration()
    qys = [-0.08, -0.182, -0.35]
    span = (-200.0, 200.0)
    pts1 = symmetric_locus(cal, BA138, qys, vdc_span=span)
    doubled = IonSpecies(mass_u=276.0, label="heavy")
    pts2 = symmetric_locus(cal, doubled, qys, vdc_span=span)
    assert np.allclose(pts1, pts2, rtol=1e-9)


def test_symmetric_locus_no_solution():
    cal = default_calibration()
    with pytest.raises(NoSolution):
        symmetric_locus(cal, BA138, [0.3])  # positive q_y unreachable with this drive
    with pytest.raises(NoSolution):
        symmetric_vdc(cal, BA138, 802.0, span=(-60.0, -40.0))


def test_calibration_roundtrip(tmp_path):
    cal = default_calibration()
    path = tmp_path / "trap.json"
    save_calibration(cal, path)
    cal2 = load_calibration(path)
    assert cal2 == cal


def test_calibration_bad_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"omega_rf_hz": 4.7e6}')
    with pytest.raises(ValueError):
        load_calibration(path)


def test_fit_calibration_matches_shipped_default():
    fitted = fit_calibration()
    shipped = default_calibration()
    assert np.allclose(fitted.coeff_a, shipped.coeff_a, rtol=1e-9, atol=1e-15)
    assert np.allclose(fitted.coeff_q, shipped.coeff_q, rtol=1e-12)


def test_trap_from_frequencies():
    w = 2 * math.pi * 100e3
    trap = trap_from_frequencies(w, w, w)
    got = secular_frequencies(trap, BA138)
    assert np.allclose(got, (w, w, w), rtol=1e-12)


def test_get_species():
    assert get_species("138Ba") is BA138
    assert get_species("137Ba+") is BA137
    with pytest.raises(KeyError):
        get_species("40Ca")
