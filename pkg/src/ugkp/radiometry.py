"""Planck-spectrum machinery, opacity models, and spectral means.

Units: photon energy u = h*nu in keV, temperature T in keV (so kT = T
numerically), absorption coefficient sigma in 1/cm, time in ns, length in
cm.  Energies are in GJ; the angle/frequency-integrated intensity rho and
the radiation energy density proxy U_r = a*c*T^4 carry units of
c x (energy density).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

# Speed of light (cm/ns) and radiation constant (GJ cm^-3 keV^-4).
C_LIGHT = 29.98
A_RAD = 0.01372

_B_COEF = 15.0 / math.pi**4   # normalization of x^3/(e^x - 1)
_WK_COEF = 15.0 / (4.0 * math.pi**4)
_X_CUT = 700.0                # e^{-x} underflows the Planck tail to 0
_SIGMA_FLOOR = 1.0e-12        # clamp for 1/sigma-weighted integrands


@dataclass(frozen=True)
class PhysConstants:
    """Physical constants and the kinetic scaling parameter."""

    c: float = C_LIGHT
    a: float = A_RAD
    epsilon: float = 1.0

    def __post_init__(self):
        if self.c <= 0 or self.a <= 0 or self.epsilon <= 0:
            raise ValueError("c, a, epsilon must all be positive")


GRAY_CONSTANT = 0
GRAY_POWER_LAW = 1
FREQUENCY_STEP = 2
FREQUENCY_POWER_LAW = 3
STIMULATED_POWER_LAW = 4

_KIND_NAMES = {
    GRAY_CONSTANT: "gray-constant",
    GRAY_POWER_LAW: "gray-power-law",
    FREQUENCY_STEP: "frequency-step",
    FREQUENCY_POWER_LAW: "frequency-power-law",
    STIMULATED_POWER_LAW: "stimulated-power-law",
}


@dataclass(frozen=True)
class OpacityModel:
    """Closed-form absorption/emission coefficient sigma(u, T).

    kinds:
      gray-constant        sigma0
      gray-power-law       sigma0 / T^p
      frequency-step       sigma_low for u < u_split, else sigma_high
      frequency-power-law  sigma0 / (u^3 sqrt(T))
      stimulated-power-law sigma0 (1 - e^{-u/T}) / u^3
    """

    kind: int
    params: tuple = field(default=(0.0, 0.0, 0.0))

    @classmethod
    def gray_constant(cls, sigma0):
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        return cls(GRAY_CONSTANT, (float(sigma0), 0.0, 0.0))

    @classmethod
    def gray_power_law(cls, sigma0, exponent):
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        return cls(GRAY_POWER_LAW, (float(sigma0), float(exponent), 0.0))

    @classmethod
    def frequency_step(cls, sigma_low, sigma_high, u_split):
        if sigma_low <= 0 or sigma_high <= 0 or u_split <= 0:
            raise ValueError("frequency-step parameters must be positive")
        return cls(FREQUENCY_STEP, (float(sigma_low), float(sigma_high),
                                    float(u_split)))

    @classmethod
    def frequency_power_law(cls, sigma0):
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        return cls(FREQUENCY_POWER_LAW, (float(sigma0), 0.0, 0.0))

    @classmethod
    def stimulated_power_law(cls, sigma0):
        if sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        return cls(STIMULATED_POWER_LAW, (float(sigma0), 0.0, 0.0))

    @property
    def name(self):
        return _KIND_NAMES[self.kind]

    @property
    def is_gray(self):
        return self.kind in (GRAY_CONSTANT, GRAY_POWER_LAW)

    def gray_sigma(self, T):
        """sigma(T) for gray kinds (independent of u)."""
        if self.kind == GRAY_CONSTANT:
            return self.params[0]
        if self.kind == GRAY_POWER_LAW:
            return self.params[0] / T ** self.params[1]
        raise ValueError(f"{self.name} is not gray")

    def breakpoints(self):
        """Discontinuity locations in u, used to split quadrature panels."""
        if self.kind == FREQUENCY_STEP:
            return (self.params[2],)
        return ()

    def evaluate(self, u, T):
        """Pointwise sigma(u, T) >= 0; u and T broadcast as numpy arrays."""
        u = np.asarray(u, dtype=np.float64)
        if np.any(u <= 0.0) or T <= 0.0:
            raise ValueError("evaluate requires u > 0 and T > 0")
        p0, p1, p2 = self.params
        if self.kind == GRAY_CONSTANT:
            return np.broadcast_to(np.float64(p0), u.shape).copy()
        if self.kind == GRAY_POWER_LAW:
            return np.broadcast_to(np.float64(p0 / T**p1), u.shape).copy()
        if self.kind == FREQUENCY_STEP:
            return np.where(u < p2, p0, p1)
        if self.kind == FREQUENCY_POWER_LAW:
            return p0 / (u**3 * math.sqrt(T))
        if self.kind == STIMULATED_POWER_LAW:
            return p0 * (-np.expm1(-u / T)) / u**3
        raise ValueError(f"unknown opacity kind {self.kind}")

    def as_arrays(self):
        """(kind, params) in the packed form the tracking kernels consume."""
        return self.kind, np.array(self.params, dtype=np.float64)


@dataclass(frozen=True)
class FrequencyQuadrature:
    """Composite Gauss-Legendre rule on log-spaced panels in u."""

    u: np.ndarray
    w: np.ndarray
    u_min: float
    u_max: float
    rule: str

    def __post_init__(self):
        if np.any(self.w <= 0):
            raise ValueError("quadrature weights must be positive")
        if np.any(self.u < self.u_min) or np.any(self.u > self.u_max):
            raise ValueError("quadrature nodes outside truncation bounds")

    def integrate(self, values):
        return float(np.dot(self.w, values))


def build_quadrature(T_ref, n_panels=64, n_nodes=8, x_min=1e-4, x_max=50.0,
                     breakpoints=()):
    """Quadrature over u in [x_min, x_max]*T_ref.

    Panels are log-spaced; any breakpoint inside the range becomes an exact
    panel edge so discontinuous opacities never straddle a panel.
    """
    if T_ref <= 0:
        raise ValueError("T_ref must be positive")
    u_lo, u_hi = x_min * T_ref, x_max * T_ref
    edges = np.geomspace(u_lo, u_hi, n_panels + 1)
    cuts = [b for b in breakpoints if u_lo < b < u_hi]
    if cuts:
        edges = np.unique(np.concatenate([edges, np.asarray(cuts)]))
    gl_x, gl_w = np.polynomial.legendre.leggauss(n_nodes)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * gl_x[None, :]).ravel()
    w = (half[:, None] * gl_w[None, :]).ravel()
    return FrequencyQuadrature(u, w, u_lo, u_hi,
                               f"gauss-legendre {len(edges) - 1}x{n_nodes}")


def quadrature_for(model, T, **kwargs):
    """Quadrature adapted to a model's breakpoints at temperature T."""
    return build_quadrature(T, breakpoints=model.breakpoints(), **kwargs)


def _x3_over_expm1(x):
    # x^3/(e^x - 1), 0 beyond the overflow cut.
    xc = np.minimum(x, _X_CUT)
    return np.where(x > _X_CUT, 0.0, xc**3 / np.expm1(xc))


def _x4_emission_core(x):
    # x^4 e^x/(e^x - 1)^2; switches to the x^4 e^{-x} tail before
    # expm1(x)^2 can overflow.
    xs = np.minimum(x, 350.0)
    em = np.expm1(xs)
    core = (em + 1.0) / (em * em)
    return np.where(x > 350.0, x**4 * np.exp(-np.minimum(x, _X_CUT)),
                    x**4 * core)


def _check_uT(u, T):
    if np.any(np.asarray(u) <= 0.0):
        raise ValueError("u must be positive")
    if T <= 0.0:
        raise ValueError("T must be positive")


def planck_b(u, T):
    """Normalized Planck spectral density b(u, T), integrating to 1 over u.

    b(u, T) = (15 / (pi^4 T^4)) u^3 / (e^{u/T} - 1)
    """
    _check_uT(u, T)
    u = np.asarray(u, dtype=np.float64)
    x = u / T
    return _B_COEF / T * _x3_over_expm1(x)


def planck_B(u, T, consts=PhysConstants()):
    """Planck specific-intensity density: 4 pi * integral(B du) = a c T^4."""
    if T == 0.0:
        return np.zeros_like(np.asarray(u, dtype=np.float64))
    _check_uT(u, T)
    return (consts.a * consts.c * T**4 / (4.0 * math.pi)) * planck_b(u, T)


def dplanck_dT(u, T, consts=PhysConstants()):
    """dB/dT; satisfies 4 pi * integral(dB/dT du) = 4 a c T^3."""
    _check_uT(u, T)
    u = np.asarray(u, dtype=np.float64)
    x = u / T
    coef = 15.0 * consts.a * consts.c / (4.0 * math.pi**5)
    return coef * T * _x4_emission_core(x)


def rosseland_weight(u, T):
    """b + (T/4) db/dT: the normalized dB/dT weight; integrates to 1."""
    _check_uT(u, T)
    u = np.asarray(u, dtype=np.float64)
    x = u / T
    return _WK_COEF / T * _x4_emission_core(x)


def planck_mean(model, T, quad=None, consts=PhysConstants()):
    """Planck mean sigma_p = integral(sigma b du) (self-normalized)."""
    quad = quad if quad is not None else quadrature_for(model, T)
    b = planck_b(quad.u, T)
    sig = model.evaluate(quad.u, T)
    wb = quad.w * b
    return float(np.dot(wb, sig) / np.sum(wb))


def rosseland_mean(model, T, quad=None, consts=PhysConstants()):
    """Rosseland mean: integral(dB/dT) / integral(dB/dT / sigma)."""
    quad = quad if quad is not None else quadrature_for(model, T)
    wgt = quad.w * rosseland_weight(quad.u, T)
    sig = np.maximum(model.evaluate(quad.u, T), _SIGMA_FLOOR)
    return float(np.sum(wgt) / np.dot(wgt, 1.0 / sig))


def emission_gamma_info(model, T, dt, eps=1.0, quad=None,
                        consts=PhysConstants()):
    """Effective emission coefficient of the implicit source closure.

    gamma = integral(sigma (1 - e^{-c sigma dt/eps^2}) b du)
          / integral((1 - e^{-c sigma dt/eps^2}) b du)

    Returns (gamma, transparent) where transparent marks the degenerate
    all-frequencies-transparent case in which sigma_p is returned instead.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    quad = quad if quad is not None else quadrature_for(model, T)
    b = planck_b(quad.u, T)
    sig = model.evaluate(quad.u, T)
    absorb = -np.expm1(-consts.c * sig * dt / eps**2)
    wb = quad.w * b
    den = float(np.dot(wb, absorb))
    if den < 1e-14 * float(np.sum(wb)):
        return float(np.dot(wb, sig) / np.sum(wb)), True
    return float(np.dot(wb, sig * absorb) / den), False


def emission_gamma(model, T, dt, eps=1.0, quad=None, consts=PhysConstants()):
    return emission_gamma_info(model, T, dt, eps, quad, consts)[0]


# phi(k) = 2 - k - e^{-k}(2 + k) = sum_{n>=3} (-1)^n (n-2) k^n / n!
_PHI_COEF = np.array([(-1.0)**n * (n - 2) / math.factorial(n)
                      for n in range(3, 21)])
# psi(k) = -1 + e^{-k}(1 + k) = sum_{n>=2} (-1)^n (1-n) k^n / n!
_PSI_COEF = np.array([(-1.0)**n * (1 - n) / math.factorial(n)
                      for n in range(2, 20)])


def _poly_tail(k, coef, lead_power):
    # sum coef[i] * k^(lead_power + i), Horner from the highest order.
    acc = np.zeros_like(k)
    for c in coef[::-1]:
        acc = acc * k + c
    return acc * k**lead_power


def _phi(k):
    """2 - k - e^{-k}(2+k), cancellation-safe (~ -k^3/6 near 0)."""
    k = np.asarray(k, dtype=np.float64)
    direct = 2.0 - k - np.exp(-np.minimum(k, _X_CUT)) * (2.0 + k)
    series = _poly_tail(np.minimum(k, 0.5), _PHI_COEF, 3)
    return np.where(k > 0.5, direct, series)


def _psi(k):
    """-1 + e^{-k}(1+k), cancellation-safe (~ -k^2/2 near 0)."""
    k = np.asarray(k, dtype=np.float64)
    direct = -1.0 + np.exp(-np.minimum(k, _X_CUT)) * (1.0 + k)
    series = _poly_tail(np.minimum(k, 0.5), _PSI_COEF, 2)
    return np.where(k > 0.5, direct, series)


def kappa_gray(sigma, dt, eps=1.0, consts=PhysConstants()):
    """Signed effective diffusion coefficient for a gray opacity.

    kappa = (2 eps^2 - c sigma dt - e^{-c sigma dt/eps^2}(2 eps^2
             + c sigma dt)) / (3 sigma^2)  <= 0
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    k = consts.c * sigma * dt / eps**2
    out = eps**2 * _phi(k) / (3.0 * sigma**2)
    return float(out) if out.ndim == 0 else out


def effective_kappa(model, T, dt, eps=1.0, quad=None, consts=PhysConstants()):
    """Signed face diffusion coefficient of the macroscopic flux closure.

    Integrates the gray kernel over the normalized dB/dT weight
    b + (T/4) db/dT.  Negative for any sigma > 0; its opaque limit is
    -c dt / (3 sigma_R), which plugged into the rho update yields the
    stable five-point diffusion stencil.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    quad = quad if quad is not None else quadrature_for(model, T)
    wgt = quad.w * rosseland_weight(quad.u, T)
    sig = np.maximum(model.evaluate(quad.u, T), _SIGMA_FLOOR)
    g = kappa_gray(sig, dt, eps, consts)
    return float(np.dot(wgt, g) / np.sum(wgt))


def time_kernel_coefficients(t, sigma, eps=1.0, consts=PhysConstants()):
    """(C1, C2, C3) of the second-order expansion of the integral solution.

    C1 = 1 - e^{-c sigma t/eps^2}
    C2 = (-eps^2 + e^{-c sigma t/eps^2}(eps^2 + c sigma t)) / (c sigma)
    C3 = (c/eps) C2
    """
    if t < 0 or sigma <= 0:
        raise ValueError("t must be >= 0 and sigma > 0")
    k = consts.c * sigma * t / eps**2
    c1 = float(-np.expm1(-min(k, _X_CUT)))
    c2 = float(eps**2 * _psi(k) / (consts.c * sigma))
    c3 = consts.c / eps * c2
    return c1, c2, c3


def sample_planck_u(T, rng, size=None):
    """Draw photon energies from b(u, T) (exact series method).

    rng is a numpy Generator; passing size=None returns a scalar.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    n = 1 if size is None else int(size)
    seed = int(rng.integers(0, 2**63 - 1))
    out = kernels.sample_planck_batch(T, n, np.uint64(seed))
    return float(out[0]) if size is None else out


def sample_emission_u(model, T, dt, eps=1.0, rng=None, size=None,
                      consts=PhysConstants()):
    """Draw photon energies with density ~ (1 - e^{-c sigma dt/eps^2}) b.

    Rejection against the Planck envelope; when the expected acceptance is
    below 1e-6 (all frequencies transparent over dt) a tabulated-CDF
    inversion on the quadrature grid is used instead.
    """
    if T <= 0 or dt <= 0:
        raise ValueError("T and dt must be positive")
    n = 1 if size is None else int(size)
    quad = quadrature_for(model, T)
    b = planck_b(quad.u, T)
    accept = -np.expm1(-consts.c * model.evaluate(quad.u, T) * dt / eps**2)
    expected = float(np.dot(quad.w, b * accept))
    if expected < 1e-6:
        out = _sample_tabulated(quad.u, quad.w * b * accept, rng, n)
    else:
        kind, params = model.as_arrays()
        seed = int(rng.integers(0, 2**63 - 1))
        out = kernels.sample_emission_batch(
            T, n, np.uint64(seed), kind, params, consts.c * dt / eps**2)
    return float(out[0]) if size is None else out


def _sample_tabulated(u, masses, rng, n):
    # Inverse-CDF on the quadrature grid; fallback for vanishing acceptance.
    cdf = np.cumsum(masses)
    if cdf[-1] <= 0.0:
        raise ValueError("emission density vanishes on the quadrature grid")
    cdf /= cdf[-1]
    xi = rng.random(n)
    idx = np.searchsorted(cdf, xi)
    return u[np.minimum(idx, len(u) - 1)]
