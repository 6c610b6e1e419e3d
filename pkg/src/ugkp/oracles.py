"""Deterministic reference solvers used for verification.

These share no code path with the particle solver's closures: band
fractions come from exact series of the Planck integral rather than the
quadrature module, and the diffusion oracle discretizes the Rosseland
limit equation directly.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import T_FLOOR
from .radiometry import PhysConstants, rosseland_mean
from .transport import pack_regions

_PI4_15 = math.pi**4 / 15.0

# t/(e^t - 1) = sum B_n t^n / n!  (Bernoulli); drives the small-x branch
_BERN = (1.0, -0.5, 1.0 / 12.0, 0.0, -1.0 / 720.0, 0.0, 1.0 / 30240.0, 0.0,
         -1.0 / 1209600.0, 0.0, 1.0 / 47900160.0)


def planck_band_cumulative(x):
    """(15/pi^4) * integral_0^x t^3/(e^t - 1) dt, exact series evaluation.

    Saturates to 1 as x -> infinity.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x < 0.8
    if np.any(small):
        xs = x[small]
        acc = np.zeros_like(xs)
        # integral of t^2 * sum (B_n/n!) t^n -> sum (B_n/n!) x^{n+3}/(n+3)
        for n_, bn in enumerate(_BERN):
            if bn != 0.0:
                acc += bn / (n_ + 3) * xs ** (n_ + 3)
        out[small] = acc / _PI4_15
    if np.any(~small):
        xl = x[~small]
        acc = np.full_like(xl, 6.0 * (math.pi**4 / 90.0))  # 6 zeta(4)
        nmax = int(45.0 / float(xl.min())) + 3
        for n_ in range(1, nmax + 1):
            e = np.exp(-n_ * np.minimum(xl, 700.0 / n_))
            acc -= e * (xl**3 / n_ + 3 * xl**2 / n_**2 + 6 * xl / n_**3
                        + 6.0 / n_**4)
        out[~small] = acc / _PI4_15
    return out


def band_fractions(u_edges, T):
    """Integral of b(u, T) over each group [u_g, u_{g+1}]."""
    return np.diff(planck_band_cumulative(np.asarray(u_edges) / T))


@dataclass
class MultigroupResult:
    times: np.ndarray
    T_hist: np.ndarray
    u_edges: np.ndarray
    rho_g: np.ndarray          # final per-group integrated intensity
    conservation_drift: float  # max per-step drift relative to the total


def multigroup_homogeneous_solve(T0, model, cv, G, dt, t_end,
                                 spectrum_T=None, radiation_T=None,
                                 eps=1.0, consts=PhysConstants(),
                                 u_span=(1e-4, 50.0)):
    """Implicit-Euler multigroup relaxation of the homogeneous problem.

    d rho_g/dt = (c/eps^2) sigma_g (U_r(T) b_g(T) - rho_g)
    Cv dT/dt   = (1/eps^2) sum_g sigma_g (rho_g - U_r(T) b_g(T))

    sigma_g is evaluated at the group-center photon energy.  The initial
    intensity is a c radiation_T^4 distributed as a Planckian at
    spectrum_T (both default to T0).  Total energy sum(rho_g)/c + Cv T is
    conserved per step to solver precision.
    """
    spectrum_T = T0 if spectrum_T is None else spectrum_T
    radiation_T = T0 if radiation_T is None else radiation_T
    T_ref = max(T0, spectrum_T, radiation_T)
    lo, hi = u_span[0] * T_ref, u_span[1] * T_ref
    u_edges = np.geomspace(lo, hi, G + 1)
    cuts = [b for b in model.breakpoints() if lo < b < hi]
    if cuts:
        u_edges = np.unique(np.concatenate([u_edges, np.asarray(cuts)]))
    u_mid = 0.5 * (u_edges[:-1] + u_edges[1:])

    ac = consts.a * consts.c
    rho_g = ac * radiation_T**4 * band_fractions(u_edges, spectrum_T)
    T = float(T0)
    n_steps = int(round(t_end / dt))
    times = np.empty(n_steps + 1)
    T_hist = np.empty(n_steps + 1)
    times[0], T_hist[0] = 0.0, T
    max_drift = 0.0

    def sigma_at(Tm):
        return model.evaluate(u_mid, Tm)

    for step in range(1, n_steps + 1):
        T_n = T
        rho_n = rho_g
        total_n = rho_n.sum() / consts.c + cv * T_n

        def residual(Tm):
            sig = sigma_at(Tm)
            dtau = consts.c * sig * dt / eps**2
            em = ac * Tm**4 * band_fractions(u_edges, Tm)
            return (cv * (Tm - T_n) * eps**2 / dt
                    - np.sum(sig * (rho_n - em) / (1.0 + dtau)))

        T_hi = T_n + rho_n.sum() / consts.c / cv + 1e-12
        T_lo = T_FLOOR
        Tm = T_n
        f = residual(Tm)
        converged = False
        for _ in range(50):           # Newton with numeric derivative
            h = max(1e-8 * Tm, 1e-12)
            df = (residual(Tm + h) - f) / h
            if df == 0.0:
                break
            T_next = Tm - f / df
            if not (T_lo < T_next < T_hi):
                break
            if abs(T_next - Tm) < 1e-14 * max(Tm, 1e-6):
                Tm = T_next
                f = residual(Tm)
                converged = True
                break
            Tm = T_next
            f = residual(Tm)
        if not converged:            # safeguarded bracket fallback
            from scipy.optimize import brentq
            flo, fhi = residual(T_lo), residual(T_hi)
            if flo * fhi > 0:
                raise RuntimeError("multigroup Newton failed to bracket")
            Tm = brentq(residual, T_lo, T_hi, xtol=1e-15, rtol=8.9e-16)
        T = float(Tm)
        sig = sigma_at(T)
        dtau = consts.c * sig * dt / eps**2
        em = ac * T**4 * band_fractions(u_edges, T)
        rho_g = (rho_n + dtau * em) / (1.0 + dtau)
        total = rho_g.sum() / consts.c + cv * T
        max_drift = max(max_drift, abs(total - total_n) / abs(total_n))
        if max_drift > 1e-8:
            raise RuntimeError(
                f"multigroup oracle conservation drift {max_drift:.2e}")
        times[step] = step * dt
        T_hist[step] = T
    return MultigroupResult(times=times, T_hist=T_hist, u_edges=u_edges,
                            rho_g=rho_g, conservation_drift=max_drift)


@dataclass
class DiffusionResult:
    times: list
    T_frames: list             # flattened T fields at snapshot times
    T: np.ndarray              # final
    Ur: np.ndarray


def rosseland_diffusion_solve(mesh, region_id, regions, T_init, dt, t_end,
                              boundary=None, consts=PhysConstants(),
                              tol=1e-10, max_iter=2000, snapshot_every=0):
    """Backward-Euler, Picard-lagged five-point Rosseland diffusion.

    Solves d/dt(Cv T + a T^4) = div( a c/(3 sigma_R) grad T^4 ) in the
    variable phi = a c T^4; the material term is lagged with the exact
    secant d(acT^4)/dT between time levels so the converged step is the
    plain backward-Euler discretization.

    boundary: dict edge-name -> ("dirichlet", T_b) or ("zero-flux", 0);
    default zero-flux everywhere.  Face sigma_R is evaluated at the
    arithmetic-mean face temperature per side and the two sides'
    diffusivities are averaged.
    """
    nx, ny = mesh.nx, mesh.ny
    n = nx * ny
    ac = consts.a * consts.c
    boundary = boundary or {}
    _, _, cv_reg = pack_regions(regions)
    cv = cv_reg[region_id]
    sigR_cache = {}

    def sig_R(reg_idx, T_face):
        # gray: exact; else interpolate between cached 1e-4-relative T
        # buckets (a stepwise cache would admit Picard limit cycles)
        model = regions[reg_idx].opacity
        if model.is_gray:
            return model.gray_sigma(max(T_face, T_FLOOR))
        lnq = math.log(max(T_face, T_FLOOR)) * 1e4
        b0 = math.floor(lnq)
        frac = lnq - b0
        vals = []
        for b in (b0, b0 + 1):
            key = (reg_idx, b)
            got = sigR_cache.get(key)
            if got is None:
                got = rosseland_mean(model, math.exp(b * 1e-4))
                sigR_cache[key] = got
            vals.append(got)
        return vals[0] + frac * (vals[1] - vals[0])

    def face_D(reg_l, reg_r, T_face):
        return 0.5 * (1.0 / (3.0 * sig_R(reg_l, T_face))
                      + 1.0 / (3.0 * sig_R(reg_r, T_face)))

    T = np.maximum(np.asarray(T_init, dtype=np.float64).copy(), T_FLOOR)
    phi = ac * T**4
    n_steps = int(round(t_end / dt))
    result = DiffusionResult(times=[0.0], T_frames=[T.copy()], T=T,
                             Ur=phi)
    r2 = region_id.reshape(ny, nx)

    for step in range(1, n_steps + 1):
        T_n = T.copy()
        phi_n = phi.copy()
        T_m = T.copy()
        omega = 1.0
        prev_update = None
        for it in range(1, max_iter + 1):
            dT = T_m - T_n
            beta = 4.0 * ac * T_m**3
            with np.errstate(divide="ignore", invalid="ignore"):
                beta_sec = np.where(np.abs(dT) > 1e-12 * np.maximum(T_m,
                                                                    T_n),
                                    ac * (T_m**4 - T_n**4) / dT, beta)
            lhs_diag = (cv / beta_sec + 1.0 / consts.c) / dt
            rows, cols, vals = [], [], []
            rhs = lhs_diag * phi_n
            diag = lhs_diag.copy()
            T2 = T_m.reshape(ny, nx)
            # interior x faces
            for iface in range(1, nx):
                h = 0.5 * (mesh.dx[iface - 1] + mesh.dx[iface])
                for j in range(ny):
                    Tf = 0.5 * (T2[j, iface - 1] + T2[j, iface])
                    D = face_D(r2[j, iface - 1], r2[j, iface], Tf)
                    left = j * nx + iface - 1
                    right = left + 1
                    cl = D / (mesh.dx[iface - 1] * h)
                    cr = D / (mesh.dx[iface] * h)
                    rows += [left, right]
                    cols += [right, left]
                    vals += [-cl, -cr]
                    diag[left] += cl
                    diag[right] += cr
            # interior y faces
            for jface in range(1, ny):
                h = 0.5 * (mesh.dy[jface - 1] + mesh.dy[jface])
                for i in range(nx):
                    Tf = 0.5 * (T2[jface - 1, i] + T2[jface, i])
                    D = face_D(r2[jface - 1, i], r2[jface, i], Tf)
                    low = (jface - 1) * nx + i
                    high = low + nx
                    cl = D / (mesh.dy[jface - 1] * h)
                    ch = D / (mesh.dy[jface] * h)
                    rows += [low, high]
                    cols += [high, low]
                    vals += [-cl, -ch]
                    diag[low] += cl
                    diag[high] += ch
            # Dirichlet boundaries via half-cell gradient
            for edge, spec_ in boundary.items():
                kind = spec_[0]
                if kind != "dirichlet":
                    continue
                T_b = spec_[1]
                phi_b = ac * T_b**4
                if edge in ("left", "right"):
                    i = 0 if edge == "left" else nx - 1
                    for j in range(ny):
                        cell = j * nx + i
                        Tf = 0.5 * (T_b + T2[j, i])
                        D = face_D(r2[j, i], r2[j, i], Tf)
                        coef = D / (mesh.dx[i] * 0.5 * mesh.dx[i])
                        diag[cell] += coef
                        rhs[cell] += coef * phi_b
                else:
                    j = 0 if edge == "bottom" else ny - 1
                    for i in range(nx):
                        cell = j * nx + i
                        Tf = 0.5 * (T_b + T2[j, i])
                        D = face_D(r2[j, i], r2[j, i], Tf)
                        coef = D / (mesh.dy[j] * 0.5 * mesh.dy[j])
                        diag[cell] += coef
                        rhs[cell] += coef * phi_b
            rows += [np.arange(n)]
            cols += [np.arange(n)]
            vals += [diag]
            M = sp.csr_matrix(
                (np.concatenate([np.atleast_1d(v) for v in vals]),
                 (np.concatenate([np.atleast_1d(r) for r in rows]),
                  np.concatenate([np.atleast_1d(c) for c in cols]))),
                shape=(n, n))
            phi = spla.spsolve(sp.csc_matrix(M), rhs)
            T_new = np.maximum((np.maximum(phi, 0.0) / ac) ** 0.25, T_FLOOR)
            dT_abs = np.abs(T_new - T_m)
            dT_abs[dT_abs < 1e-3 * T_FLOOR] = 0.0
            resid = float(np.max(dT_abs / np.maximum(T_m, T_FLOOR)))
            if resid < tol:
                T_m = T_new
                break
            # anti-oscillation damping plus geometric extrapolation of
            # slowly contracting colinear update sequences
            update = T_new - T_m
            extrapolated = False
            if prev_update is not None:
                dd = float(np.dot(update, prev_update))
                if dd < 0.0:
                    omega = max(0.5 * omega, 0.1)
                else:
                    omega = min(1.0, 1.4 * omega)
                    nu = float(np.linalg.norm(update))
                    npv = float(np.linalg.norm(prev_update))
                    if nu > 0 and npv > 0:
                        cos = dd / (nu * npv)
                        ratio = nu / npv
                        if omega == 1.0 and cos > 0.95 and \
                                0.2 < ratio < 0.995:
                            boost = min(ratio / (1.0 - ratio), 50.0)
                            T_m = np.maximum(T_new + boost * update,
                                             T_FLOOR)
                            prev_update = None
                            extrapolated = True
            if not extrapolated:
                prev_update = update
                T_m = np.maximum(T_m + omega * update, T_FLOOR)
        else:
            raise RuntimeError("diffusion oracle Picard did not converge")
        T = np.maximum((np.maximum(phi, 0.0) / ac) ** 0.25, T_FLOOR)
        if snapshot_every and step % snapshot_every == 0:
            result.times.append(step * dt)
            result.T_frames.append(T.copy())
    result.T = T
    result.Ur = ac * T**4
    return result


def free_stream_exact(positions, directions, t, eps=1.0,
                      consts=PhysConstants()):
    """Exact collisionless translation: x + (c/eps) t Omega."""
    positions = np.asarray(positions, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    return positions + consts.c / eps * t * directions[..., :positions.shape[-1]]


def rho_field_from_particles(positions, weights, mesh):
    """Per-cell rho estimate sum(w)/V for a particle ensemble."""
    xi = np.minimum(np.searchsorted(mesh.x_edges, positions[:, 0],
                                    side="right") - 1, mesh.nx - 1)
    yj = np.minimum(np.searchsorted(mesh.y_edges, positions[:, 1],
                                    side="right") - 1, mesh.ny - 1)
    rho = np.zeros(mesh.n_cells)
    np.add.at(rho, np.maximum(yj, 0) * mesh.nx + np.maximum(xi, 0), weights)
    return rho / mesh.volumes()
