"""Correlation and spread analysis against closed-form oracles.

For n_i proportional to 1 + eps cos(k theta_i) the autocorrelation contrast is
g(d) = (eps^2/2)(cos(2 pi k d / B) - 1)/(1 + eps^2/2), so the k-fold amplitude
is exactly (eps^2/2)/(1 + eps^2/2); eps = 1/2 gives 1/9.
"""

import numpy as np
import pytest

from meltlab.analysis import (
    AngularDensity,
    SpreadFit,
    Suppressed,
    angular_correlation,
    bin_centers,
    correlate,
    correlation_amplitude,
    fit_angular_spread,
    fit_temperature,
    _comb,
)
from meltlab.errors import EmptyDensity, FitFailed

TWO_PI = 2.0 * np.pi


def test_bin_centers_offset():
    c = bin_centers(360)
    assert len(c) == 360
    assert c[0] == pytest.approx(np.pi / 360)
    assert c[-1] == pytest.approx(TWO_PI - np.pi / 360)


def test_density_validation():
    with pytest.raises(EmptyDensity):
        AngularDensity(np.zeros(16))
    with pytest.raises(ValueError):
        AngularDensity(np.full(16, -1.0))
    with pytest.raises(ValueError):
        AngularDensity(np.full(16, np.nan))
    with pytest.raises(ValueError):
        AngularDensity(np.ones((4, 4)))
    with pytest.raises(ValueError):
        AngularDensity(np.ones(16), angle_kind="polar")
    d = AngularDensity(np.full(16, 2.5))
    assert d.normalized.sum() == pytest.approx(1.0, abs=1e-15)


def test_uniform_density_has_exactly_zero_correlation():
    g = angular_correlation(np.full(360, 0.123))
    assert np.all(g == 0.0)
    assert correlation_amplitude(g, 6) == 0.0


def test_cosine_density_matches_closed_form():
    theta = bin_centers(360)
    for eps, k in [(0.5, 6), (0.3, 4), (0.9, 10)]:
        n = 1.0 + eps * np.cos(k * theta)
        c = correlate(n, k).c
        expected = (eps**2 / 2) / (1 + eps**2 / 2)
        assert c == pytest.approx(expected, abs=1e-9)
    # the frozen reference point: eps = 1/2 -> C = 1/9
    n = 1.0 + 0.5 * np.cos(6 * theta)
    assert correlate(n, 6).c == pytest.approx(1.0 / 9.0, abs=1e-6)


def test_correlation_scale_invariance_and_symmetry():
    rng = np.random.default_rng(5)
    n = rng.uniform(0.1, 1.0, 240)
    g = angular_correlation(n)
    assert np.allclose(angular_correlation(4.0 * n), g, atol=1e-13)
    assert np.allclose(angular_correlation(3.7 * n), g, atol=1e-13)
    assert np.allclose(g[1:], g[1:][::-1], atol=1e-12)  # g(k) = g(B - k)
    assert g[0] == 0.0


def test_amplitude_phase_invariance_and_order_bounds():
    theta = bin_centers(360)
    n = 1.0 + 0.4 * np.cos(6 * theta + 1.234)
    g = angular_correlation(n)
    c = correlation_amplitude(g, 6)
    assert correlation_amplitude(np.roll(g, 17), 6) == pytest.approx(c, rel=1e-12)
    with pytest.raises(ValueError):
        correlation_amplitude(g, 1)
    with pytest.raises(ValueError):
        correlation_amplitude(g, 180)


def test_off_harmonic_amplitude_is_small():
    theta = bin_centers(360)
    n = 1.0 + 0.5 * np.cos(6 * theta)
    assert correlate(n, 5).c < 1e-9
    assert correlate(n, 7).c < 1e-9


def test_spread_fit_recovers_generating_parameters():
    theta = bin_centers(360)
    n = _comb(theta, n_t=4, sigma=0.1, amplitude=1.0, phase=0.8, offset=0.1)
    fit = fit_angular_spread(n, 4)
    assert isinstance(fit, SpreadFit)
    assert fit.sigma == pytest.approx(0.1, abs=0.002)
    assert fit.sigma_over_theta_nt == pytest.approx(0.1 / (TWO_PI / 4), abs=0.002)
    assert fit.amplitude == pytest.approx(1.0, rel=0.02)
    assert fit.offset == pytest.approx(0.1, abs=0.01)
    assert fit.goodness < 1e-6
    # centers equally spaced by the peak separation, as a full comb
    gaps = np.diff(np.sort(fit.centers))
    assert np.allclose(gaps, TWO_PI / 4, atol=1e-9)


def test_spread_fit_scale_independent():
    theta = bin_centers(360)
    n = _comb(theta, n_t=6, sigma=0.07, amplitude=0.8, phase=-0.4, offset=0.05)
    a = fit_angular_spread(n, 6)
    b = fit_angular_spread(123.0 * n, 6)
    assert b.sigma == pytest.approx(a.sigma, rel=1e-6)


def test_spread_fit_suppressed_on_flat_density():
    out = fit_angular_spread(np.ones(360), 6)
    assert isinstance(out, Suppressed)
    assert out.c <= 4e-4
    assert out.n_t == 6


def test_spread_fit_threshold_is_parameterized():
    theta = bin_centers(360)
    n = 1.0 + 0.1 * np.cos(6 * theta)  # C = 5e-3/1.005, above default threshold
    assert isinstance(fit_angular_spread(n, 6), SpreadFit)
    assert isinstance(fit_angular_spread(n, 6, c_threshold=0.1), Suppressed)


def test_spread_fit_fails_on_mismatched_shape():
    theta = bin_centers(360)
    # one broad lone peak cannot be explained by an equal 4-fold comb
    n = np.exp(-((theta - 1.0) ** 2) / (2 * 0.3**2)) + 0.01
    with pytest.raises(FitFailed):
        fit_angular_spread(n, 4)


def _toy_c_curve(t_k, ratios=(0.8, 0.9, 1.0, 1.1, 1.2, 1.3)):
    # decreasing in temperature, anisotropy-dependent scale
    return [(r, (0.02 + abs(r - 1.0)) * np.exp(-t_k / 0.04)) for r in ratios]


def test_temperature_fit_self_consistency():
    fit = fit_temperature(_toy_c_curve(0.1), _toy_c_curve)
    assert fit.best_t == pytest.approx(0.1)
    assert fit.best_t_mk == pytest.approx(100.0)
    assert not fit.at_boundary
    assert fit.sse_curve.min() == pytest.approx(0.0, abs=1e-24)
    assert len(fit.sse_curve) == len(fit.t_grid) == 120


def test_temperature_fit_zero_data_hits_upper_boundary():
    ratios = [r for r, _ in _toy_c_curve(0.01)]
    measured = [(r, 0.0) for r in ratios]
    fit = fit_temperature(measured, _toy_c_curve)
    assert fit.best_t_mk == pytest.approx(120.0)
    assert fit.at_boundary


def test_temperature_fit_validation():
    with pytest.raises(ValueError):
        fit_temperature([], _toy_c_curve)
    with pytest.raises(ValueError):
        fit_temperature(_toy_c_curve(0.1), lambda t: _toy_c_curve(t, ratios=(1.0, 1.1)))
    with pytest.raises(ValueError):
        fit_temperature(_toy_c_curve(0.1), _toy_c_curve, t_grid=np.array([0.1]))
