import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def planck_cdf_table(T, n=20001):
    """Fine-quadrature CDF of the normalized Planck density, for KS tests."""
    from ugkp.radiometry import planck_b
    u = np.geomspace(1e-4 * T, 60.0 * T, n)
    pdf = planck_b(u, T)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pdf[1:] + pdf[:-1])
                                           * np.diff(u))])
    cdf /= cdf[-1]
    return u, cdf


def ks_statistic(samples, cdf_u, cdf_v):
    samples = np.sort(samples)
    F = np.interp(samples, cdf_u, cdf_v)
    n = len(samples)
    emp_hi = np.arange(1, n + 1) / n
    emp_lo = np.arange(0, n) / n
    return float(max(np.max(np.abs(F - emp_hi)), np.max(np.abs(F - emp_lo))))


def ks_critical(n, alpha=0.01):
    # asymptotic Kolmogorov critical value
    return float(np.sqrt(-0.5 * np.log(alpha / 2.0)) / np.sqrt(n))
