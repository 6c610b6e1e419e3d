import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from conftest import ks_critical, ks_statistic, planck_cdf_table
from ugkp.radiometry import (OpacityModel, PhysConstants, build_quadrature,
                             dplanck_dT, effective_kappa, emission_gamma,
                             emission_gamma_info, kappa_gray, planck_B,
                             planck_b, planck_mean, quadrature_for,
                             rosseland_mean, rosseland_weight,
                             sample_emission_u, sample_planck_u,
                             time_kernel_coefficients)

C = PhysConstants()
AC = C.a * C.c


def test_constants_defaults():
    assert C.c == 29.98 and C.a == 0.01372 and C.epsilon == 1.0
    with pytest.raises(ValueError):
        PhysConstants(c=-1.0)


# -- planck_b -------------------------------------------------------------

@pytest.mark.parametrize("T", [0.01, 0.1, 1.0, 10.0])
def test_planck_b_normalization(T):
    q = build_quadrature(T)
    assert abs(q.integrate(planck_b(q.u, T)) - 1.0) < 1e-8


def test_planck_b_argmax():
    # independent numeric maximization of x^3/(e^x - 1)
    res = minimize_scalar(lambda x: -(x**3 / np.expm1(x)),
                          bounds=(1.0, 5.0), method="bounded",
                          options={"xatol": 1e-12})
    x_star = res.x
    for T in (0.5, 2.0):
        r2 = minimize_scalar(lambda u: -planck_b(u, T),
                             bounds=(0.5 * T, 8.0 * T), method="bounded",
                             options={"xatol": 1e-12})
        assert abs(r2.x - x_star * T) < 1e-6 * T
        assert abs(x_star - 2.8214) < 1e-3


def test_planck_b_scale_invariance():
    for u, T in [(0.7, 0.3), (2.5, 1.0), (14.0, 4.0)]:
        assert planck_b(u, 2 * T) == pytest.approx(
            planck_b(u / 2, T) / 2, rel=1e-14)


def test_planck_b_domain_and_overflow():
    with pytest.raises(ValueError):
        planck_b(-1.0, 1.0)
    with pytest.raises(ValueError):
        planck_b(1.0, 0.0)
    v = planck_b(np.array([800.0, 2000.0]), 1.0)
    assert np.all(v == 0.0) and not np.any(np.isnan(v))


# -- planck_B -------------------------------------------------------------

def test_planck_B_total_intensity():
    q = build_quadrature(1.0)
    total = 4 * math.pi * q.integrate(planck_B(q.u, 1.0))
    assert total == pytest.approx(0.01372 * 29.98, rel=1e-6)
    assert total == pytest.approx(0.411326, rel=1e-5)


def test_planck_B_zero_temperature():
    assert np.all(planck_B(np.array([0.5, 2.0]), 0.0) == 0.0)


def test_planck_B_over_b_constant():
    u = np.array([0.3, 1.0, 4.0])
    ratio = planck_B(u, 1.3) / planck_b(u, 1.3)
    assert np.allclose(ratio, AC * 1.3**4 / (4 * math.pi), rtol=1e-13)


# -- dplanck_dT -----------------------------------------------------------

def test_dplanck_dT_integral_identity():
    q = build_quadrature(1.0)
    val = 4 * math.pi * q.integrate(dplanck_dT(q.u, 1.0))
    assert val == pytest.approx(4 * AC, rel=1e-6)
    assert val == pytest.approx(1.645304, rel=1e-5)


def test_dplanck_dT_finite_difference():
    u, T = 1.0, 1.0
    for delta in (1e-3, 1e-4):
        fd = (planck_B(u, T + delta) - planck_B(u, T - delta)) / (2 * delta)
        assert dplanck_dT(u, T) == pytest.approx(fd, rel=1e-5)


def test_dplanck_dT_positive():
    q = build_quadrature(1.0)
    assert np.all(dplanck_dT(q.u, 1.0) >= 0.0)


def test_rosseland_weight_normalized():
    q = build_quadrature(2.0)
    assert q.integrate(rosseland_weight(q.u, 2.0)) == pytest.approx(
        1.0, abs=1e-10)


# -- spectral means -------------------------------------------------------

def test_planck_mean_gray_exact():
    m = OpacityModel.gray_constant(5.0)
    assert planck_mean(m, 1.0) == pytest.approx(5.0, rel=1e-12)


def test_planck_mean_frequency_step():
    m = OpacityModel.frequency_step(1e-8, 1000.0, 1.0)
    # independent fine quadrature for P = integral_0^1 b du at T=1
    P, _ = quad(lambda u: 15 / math.pi**4 * u**3 / np.expm1(u), 0.0, 1.0,
                epsabs=1e-14, epsrel=1e-13)
    expect = 1e-8 * P + 1000.0 * (1 - P)
    assert planck_mean(m, 1.0) == pytest.approx(expect, rel=1e-9)


def test_planck_mean_linearity():
    m1 = OpacityModel.frequency_step(2.0, 8.0, 1.0)
    m2 = OpacityModel.frequency_step(4.0, 16.0, 1.0)
    assert planck_mean(m2, 1.3) == pytest.approx(2 * planck_mean(m1, 1.3),
                                                 rel=1e-12)


def test_rosseland_mean_gray_power_law():
    m = OpacityModel.gray_power_law(300.0, 3.0)
    assert rosseland_mean(m, 0.5) == pytest.approx(2400.0, rel=1e-12)


def _trapz_oracle_rosseland(model, T, n=1_000_000):
    u = np.linspace(1e-6 * T, 60.0 * T, n)
    w = dplanck_dT(u, T)
    sig = np.maximum(model.evaluate(u, T), 1e-12)
    return np.trapezoid(w, u) / np.trapezoid(w / sig, u)


def test_rosseland_mean_step_oracle():
    m = OpacityModel.frequency_step(1e-8, 1000.0, 1.0)
    expect = _trapz_oracle_rosseland(m, 1.0)
    # tolerance set by the trapezoid oracle's own discretization error
    assert rosseland_mean(m, 1.0) == pytest.approx(expect, rel=1e-4)


def test_rosseland_mean_homogeneity():
    m1 = OpacityModel.frequency_step(1.0, 7.0, 2.0)
    m2 = OpacityModel.frequency_step(2.0, 14.0, 2.0)
    assert rosseland_mean(m2, 1.0) == pytest.approx(
        2 * rosseland_mean(m1, 1.0), rel=1e-12)


# -- emission gamma -------------------------------------------------------

def test_emission_gamma_gray():
    m = OpacityModel.gray_constant(10.0)
    for dt in (1e-6, 1e-3, 1.0):
        assert emission_gamma(m, 1.0, dt) == pytest.approx(10.0, rel=1e-12)


def test_emission_gamma_opaque_limit():
    m = OpacityModel.frequency_step(400.0, 900.0, 1.0)
    dt = 1e4 / (C.c * 400.0)   # c sigma dt >= 1e4 at every frequency
    assert emission_gamma(m, 1.0, dt) == pytest.approx(
        planck_mean(m, 1.0), rel=1e-6)


def test_emission_gamma_step_oracle():
    m = OpacityModel.frequency_step(1e-8, 1000.0, 1.0)
    T, dt = 1.0, 2.6e-4
    u = np.linspace(1e-6, 60.0, 1_000_000)
    b = planck_b(u, T)
    sig = m.evaluate(u, T)
    absorb = -np.expm1(-C.c * sig * dt)
    expect = np.trapezoid(sig * absorb * b, u) / np.trapezoid(absorb * b, u)
    assert emission_gamma(m, T, dt) == pytest.approx(expect, rel=1e-5)


def test_emission_gamma_transparent_flag():
    m = OpacityModel.gray_constant(1e-12)
    g, flagged = emission_gamma_info(m, 1.0, 1e-12)
    assert flagged and g == pytest.approx(1e-12, rel=1e-10)


# -- effective kappa ------------------------------------------------------

def test_effective_kappa_gray_closed_form():
    # direct formula where it is numerically stable (k not small)
    for sigma, dt in [(1.0, 1.0), (50.0, 1e-2), (0.3, 0.1)]:
        m = OpacityModel.gray_constant(sigma)
        k = C.c * sigma * dt
        expect = (2 - C.c * sigma * dt
                  - math.exp(-k) * (2 + C.c * sigma * dt)) / (3 * sigma**2)
        got = effective_kappa(m, 1.0, dt)
        assert got == pytest.approx(expect, rel=1e-9)
        assert got == pytest.approx(kappa_gray(sigma, dt), rel=1e-12)
        assert got <= 0.0


def test_effective_kappa_gray_small_k_series():
    # the direct formula cancels catastrophically here; the leading
    # series term is -c^3 sigma dt^3/18 (k = c sigma dt << 1)
    sigma, dt = 1e-4, 1e-3
    got = effective_kappa(OpacityModel.gray_constant(sigma), 1.0, dt)
    lead = -C.c**3 * sigma * dt**3 / 18.0
    assert got == pytest.approx(lead, rel=1e-5)
    assert got == pytest.approx(kappa_gray(sigma, dt), rel=1e-12)


def test_effective_kappa_opaque_asymptote():
    sigma = 1.0
    dt = 1e6 / (C.c * sigma)
    kap = kappa_gray(sigma, dt)
    assert abs(kap + C.c * dt / (3 * sigma)) * 3 * sigma / (C.c * dt) < 1e-3


def test_effective_kappa_transparent_bound():
    sigma = 1.0
    dt = 1e-6 / (C.c * sigma)
    kap = kappa_gray(sigma, dt)
    assert abs(kap) <= 1.01 * C.c**3 * sigma * dt**3 / 6.0


def test_effective_kappa_monotone_in_sigma():
    # |kappa| increases toward c dt/(3 sigma) as sigma dt grows
    dt = 1e-2
    sigmas = np.logspace(-2, 4, 13)
    vals = np.abs(kappa_gray(sigmas, dt)) * 3 * sigmas / (C.c * dt)
    assert np.all(np.diff(vals) > 0)
    assert vals[-1] < 1.0 + 1e-9


# -- time kernel coefficients --------------------------------------------

def test_time_kernel_zero():
    assert time_kernel_coefficients(0.0, 3.0) == (0.0, 0.0, 0.0)


def test_time_kernel_opaque():
    c1, c2, c3 = time_kernel_coefficients(1e5, 1.0)
    assert c1 == pytest.approx(1.0, abs=1e-12)


def test_time_kernel_values_and_relation():
    c1, c2, c3 = time_kernel_coefficients(1.0, 1.0)
    expect_c2 = (-1 + math.exp(-29.98) * (1 + 29.98)) / 29.98
    assert c2 == pytest.approx(expect_c2, rel=1e-12)
    assert c3 == pytest.approx(C.c * c2, rel=1e-12)
    assert c1 >= 0.0 and c2 <= 0.0 and c3 <= 0.0


# -- samplers -------------------------------------------------------------

def test_sample_planck_mean(rng):
    s = sample_planck_u(1.0, rng, size=1_000_000)
    assert s.mean() == pytest.approx(3.8322, abs=0.01)


def test_sample_planck_ks(rng):
    n = 100_000
    s = sample_planck_u(1.0, rng, size=n)
    cu, cv = planck_cdf_table(1.0)
    assert ks_statistic(s, cu, cv) < ks_critical(n)


def test_sample_planck_scale_invariance(rng):
    n = 50_000
    s1 = sample_planck_u(1.0, rng, size=n)
    s2 = sample_planck_u(2.0, rng, size=n)
    cu, cv = planck_cdf_table(1.0)
    assert ks_statistic(s2 / 2.0, cu, cv) < ks_critical(n)


def test_sampler_determinism():
    r1 = np.random.default_rng(7)
    r2 = np.random.default_rng(7)
    a = sample_planck_u(1.0, r1, size=1000)
    b = sample_planck_u(1.0, r2, size=1000)
    assert np.array_equal(a, b)


def test_sample_emission_gray_is_planck(rng):
    n = 50_000
    m = OpacityModel.gray_constant(5.0)
    s = sample_emission_u(m, 1.0, 1e-3, rng=rng, size=n)
    cu, cv = planck_cdf_table(1.0)
    assert ks_statistic(s, cu, cv) < ks_critical(n)


def test_sample_emission_step_fraction(rng):
    m = OpacityModel.frequency_step(1e-8, 1000.0, 1.0)
    T, dt, n = 1.0, 2.6e-4, 200_000
    s = sample_emission_u(m, T, dt, rng=rng, size=n)
    u = np.linspace(1e-6, 60.0, 400_000)
    b = planck_b(u, T)
    absorb = -np.expm1(-C.c * m.evaluate(u, T) * dt)
    frac = (np.trapezoid((absorb * b)[u < 1.0], u[u < 1.0])
            / np.trapezoid(absorb * b, u))
    got = float(np.mean(s < 1.0))
    se = math.sqrt(frac * (1 - frac) / n)
    assert abs(got - frac) < 3 * se + 1e-12


def test_sample_emission_opaque_is_planck(rng):
    n = 50_000
    m = OpacityModel.frequency_step(400.0, 900.0, 1.0)
    dt = 1e4 / (C.c * 400.0)
    s = sample_emission_u(m, 1.0, dt, rng=rng, size=n)
    cu, cv = planck_cdf_table(1.0)
    assert ks_statistic(s, cu, cv) < ks_critical(n)


def test_sample_emission_fallback(rng):
    # all frequencies transparent over dt: CDF-inversion path
    m = OpacityModel.gray_constant(1e-10)
    s = sample_emission_u(m, 1.0, 1e-10, rng=rng, size=2000)
    assert np.all(s > 0) and np.isfinite(s).all()


# -- invariants -----------------------------------------------------------

@pytest.mark.parametrize("T", [0.01, 0.1, 1.0, 10.0])
def test_gray_reductions(T):
    m = OpacityModel.gray_power_law(300.0, 3.0)
    quad_ = quadrature_for(m, T)
    sig = m.gray_sigma(T)
    assert planck_mean(m, T, quad_) == pytest.approx(sig, rel=1e-12)
    assert rosseland_mean(m, T, quad_) == pytest.approx(sig, rel=1e-12)
    assert emission_gamma(m, T, 1e-3, quad=quad_) == pytest.approx(
        sig, rel=1e-12)


def test_quadrature_breakpoint_split():
    q = quadrature_for(OpacityModel.frequency_step(1.0, 2.0, 1.0), 1.0)
    assert not np.any(np.isclose(q.u, 1.0))   # the split is a panel edge
    below = q.u < 1.0
    # the step never straddles a panel: band fraction is spectrally exact
    P_quad = float(np.dot(q.w[below], planck_b(q.u[below], 1.0)))
    P, _ = quad(lambda u: 15 / math.pi**4 * u**3 / np.expm1(u), 0.0, 1.0,
                epsabs=1e-14, epsrel=1e-13)
    assert P_quad == pytest.approx(P, rel=1e-10)
