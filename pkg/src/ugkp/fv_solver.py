"""Implicit macroscopic update: coefficient assembly, source closure,
five-point linear solve, Picard iteration, and the interface limiter.

Per Picard iterate the lagged coefficients make both macroscopic equations
linear in (rho, U_r); U_r is eliminated cell-by-cell and the remaining
five-point system in rho is solved sparsely.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels, radiometry
from .mesh import T_FLOOR, MacroFields
from .radiometry import (FREQUENCY_STEP, GRAY_CONSTANT, OpacityModel,
                         PhysConstants, kappa_gray)
from .transport import pack_regions

_T_INDEPENDENT_KINDS = (GRAY_CONSTANT, FREQUENCY_STEP)


def _escape_G(k):
    """Time-average emitted fraction 1 - (1 - e^{-k})/k of the in-step
    emission, k = c sigma dt/eps^2.

    Weights the half-range outflow of the analytically emitted field
    through open domain boundaries; vanishes in the free-streaming limit
    and tends to 1 in the opaque limit.
    """
    k = np.asarray(k, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(k > 0.0, 1.0 + np.expm1(-np.minimum(k, 700.0)) /
                       np.where(k > 0.0, k, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass
class MacroCoefficients:
    """Per-cell and per-face lagged coefficients of one Picard iterate."""

    sigma_p: np.ndarray
    beta: np.ndarray          # 4 a c T^3 at the iterate temperature
    cv: np.ndarray
    gamma: np.ndarray
    A: np.ndarray             # absorption tally sum(w sigma(u,T))/V
    E_free: np.ndarray        # census weight density
    kappa_x: np.ndarray       # (ny, nx+1), signed, 0 on domain boundary
    kappa_y: np.ndarray       # (ny+1, nx)
    f_x: np.ndarray           # limiter factors, 1 where inactive
    f_y: np.ndarray
    beta_eff: np.ndarray = None  # secant slope used in the elimination
    chi_escape: np.ndarray = None  # boundary-cell emitted-field leak rate


@dataclass
class SolveReport:
    picard_iterations: int = 0
    final_residual: float = np.inf
    linear_solver_iterations: int = 0
    energy_balance_residual: float = 0.0
    ur_clamps: int = 0
    limiter_faces: int = 0
    boundary_emission_loss: float = 0.0   # weight leaked by the emitted
    converged: bool = False               # field through open boundaries


def interface_limiter(T_l, T_r, dx_l, dx_r, sigma, dt, eps=1.0,
                      consts=PhysConstants()):
    """(tau, f) of the material-interface limiter.

    tau = eps^2/(c sigma) + 10 dt (T_l - T_r)/(T_l + T_r)
          * 2/(dx_l + dx_r)
    f = (1 - e^{-dt/tau}) / (1 - e^{-c sigma dt/eps^2}), clamped to (0, 1].

    Nonpositive tau (a cold-to-hot jump) clamps tau to the collision time
    and f to 1.
    """
    if T_l <= 0 or T_r <= 0:
        raise ValueError("interface temperatures must be positive")
    base = eps**2 / (consts.c * sigma)
    tau = base + 10.0 * dt * (T_l - T_r) / (T_l + T_r) * 2.0 / (dx_l + dx_r)
    if tau <= 0.0:
        return base, 1.0
    f = (-math.expm1(-dt / tau)) / (-math.expm1(-consts.c * sigma * dt
                                                / eps**2))
    return tau, min(max(f, 1e-300), 1.0)


def absorption_tally_A(census, T, region_id, regions, volumes):
    """Per-cell A = sum over census of w sigma(u, T) / V.

    Re-evaluated at every Picard iterate's temperature.
    """
    kinds, params, _ = pack_regions(regions)
    T = np.asarray(T, dtype=np.float64)
    out = np.zeros(len(volumes))
    kernels.absorption_tally_kernel(census.offsets, census.w, census.u,
                                    region_id, kinds, params, T,
                                    np.asarray(volumes, dtype=np.float64),
                                    out)
    return out


class CoefficientTable:
    """sigma_p / gamma / kappa^eff per (region, T), bucketed at 1e-4
    relative in T.  Gray models bypass the quadrature entirely; the
    bucketed values agree with the direct integrals to the bucket width.
    """

    def __init__(self, regions, dt, eps=1.0, consts=PhysConstants(),
                 quad_opts=None):
        self.regions = regions
        self.dt = dt
        self.eps = eps
        self.consts = consts
        self.quad_opts = quad_opts or {}
        self._cache = {}

    @staticmethod
    def _buckets(T):
        return np.round(np.log(np.maximum(T, T_FLOOR)) * 1e4).astype(
            np.int64)

    def _compute(self, reg_idx, T_rep):
        model = self.regions[reg_idx].opacity
        if model.is_gray:
            sig = model.gray_sigma(T_rep)
            k = self.consts.c * sig * self.dt / self.eps**2
            kap = kappa_gray(sig, self.dt, self.eps, self.consts)
            return sig, sig, kap, -math.expm1(-k), _escape_G(k)
        quad = radiometry.quadrature_for(model, T_rep, **self.quad_opts)
        b = radiometry.planck_b(quad.u, T_rep)
        sig = model.evaluate(quad.u, T_rep)
        wb = quad.w * b
        k = self.consts.c * sig * self.dt / self.eps**2
        absorb = -np.expm1(-k)
        sigma_p = float(np.dot(wb, sig) / np.sum(wb))
        den = float(np.dot(wb, absorb))
        acceptance = den / float(np.sum(wb))
        if den < 1e-14 * float(np.sum(wb)):
            gamma = sigma_p
        else:
            gamma = float(np.dot(wb, sig * absorb) / den)
        wk = quad.w * radiometry.rosseland_weight(quad.u, T_rep)
        g = kappa_gray(np.maximum(sig, 1e-12), self.dt, self.eps,
                       self.consts)
        kappa = float(np.dot(wk, g) / np.sum(wk))
        gbar = float(np.dot(wb, _escape_G(k)) / np.sum(wb))
        return sigma_p, gamma, kappa, acceptance, gbar

    def _bucket_values(self, reg_idx, keys):
        vals = np.empty((len(keys), 5))
        for k, bu in enumerate(keys):
            key = (reg_idx, int(bu))
            got = self._cache.get(key)
            if got is None:
                got = self._compute(reg_idx, math.exp(bu * 1e-4))
                self._cache[key] = got
            vals[k] = got
        return vals

    def lookup(self, reg_idx, T):
        """Vectorized (sigma_p, gamma, kappa, acceptance, gbar) for one
        region.

        Gray models are evaluated exactly; frequency-dependent ones
        interpolate linearly between cached 1e-4-relative T buckets so
        the coefficients stay continuous in T (a discontinuous cache
        would admit Picard limit cycles at heating fronts).
        """
        T = np.atleast_1d(np.asarray(T, dtype=np.float64))
        model = self.regions[reg_idx].opacity
        if model.is_gray:
            p0, p1, _ = model.params
            sig = (np.full_like(T, p0) if model.kind == GRAY_CONSTANT
                   else p0 / T**p1)
            k = self.consts.c * sig * self.dt / self.eps**2
            kap = kappa_gray(sig, self.dt, self.eps, self.consts)
            return (sig, sig.copy(), np.atleast_1d(kap),
                    -np.expm1(-np.minimum(k, 700.0)), _escape_G(k))
        lnq = np.log(np.maximum(T, T_FLOOR)) * 1e4
        b0 = np.floor(lnq).astype(np.int64)
        frac = lnq - b0
        uniq, inv = np.unique(np.concatenate([b0, b0 + 1]),
                              return_inverse=True)
        vals = self._bucket_values(reg_idx, uniq)
        lo = vals[inv[:len(T)]]
        hi = vals[inv[len(T):]]
        picked = lo + frac[:, None] * (hi - lo)
        return (picked[:, 0], picked[:, 1], picked[:, 2], picked[:, 3],
                picked[:, 4])

    def per_cell(self, region_id, T):
        """(sigma_p, gamma, acceptance, gbar) arrays over all cells."""
        n = len(T)
        sigma_p = np.empty(n)
        gamma = np.empty(n)
        acc = np.empty(n)
        gbar = np.empty(n)
        for reg_idx in range(len(self.regions)):
            mask = region_id == reg_idx
            if not np.any(mask):
                continue
            sp_, ga_, _, ac_, gb_ = self.lookup(reg_idx, T[mask])
            sigma_p[mask] = sp_
            gamma[mask] = ga_
            acc[mask] = ac_
            gbar[mask] = gb_
        return sigma_p, gamma, acc, gbar


class MacroSolver:
    """Owns one mesh's implicit macro update and limiter face data."""

    def __init__(self, mesh, region_id, regions, dt, eps=1.0,
                 consts=PhysConstants(), limiter_enabled=False,
                 limiter_threshold=0.1, tol=1e-8, max_iter=200,
                 linear_tol=1e-10, allow_nonconverged=False,
                 quad_opts=None, boundaries=None):
        self.mesh = mesh
        self.region_id = region_id
        self.regions = regions
        self.dt = dt
        self.eps = eps
        self.consts = consts
        self.limiter_enabled = limiter_enabled
        self.limiter_threshold = limiter_threshold
        self.tol = tol
        self.max_iter = max_iter
        self.linear_tol = linear_tol
        self.allow_nonconverged = allow_nonconverged
        self.table = CoefficientTable(regions, dt, eps, consts, quad_opts)
        self.vol = mesh.volumes()
        self._needs_A_update = any(
            r.opacity.kind not in _T_INDEPENDENT_KINDS for r in regions)
        self.open_edge_length = self._open_edge_lengths(boundaries)

    def _open_edge_lengths(self, boundaries):
        """Per-cell length of domain-boundary faces open to escape.

        The emitted field's half-range outflow acts there; reflective and
        periodic edges contribute nothing.
        """
        mesh = self.mesh
        out = np.zeros(mesh.n_cells)
        if boundaries is None:
            return out
        from .mesh import INFLOW_PLANCK, OUTFLOW
        open_kinds = (INFLOW_PLANCK, OUTFLOW)
        nx, ny = mesh.nx, mesh.ny
        if boundaries.edge("left")[0] in open_kinds:
            out[np.arange(ny) * nx] += mesh.dy
        if boundaries.edge("right")[0] in open_kinds:
            out[np.arange(ny) * nx + nx - 1] += mesh.dy
        if boundaries.edge("bottom")[0] in open_kinds:
            out[np.arange(nx)] += mesh.dx
        if boundaries.edge("top")[0] in open_kinds:
            out[(ny - 1) * nx + np.arange(nx)] += mesh.dx
        return out

    # -- face coefficient assembly -------------------------------------

    def assemble_face_kappa(self, T):
        """Face kappa^eff maps (and limiter data) at the given cell
        temperatures.

        Face temperature is the arithmetic neighbor mean; kappa is the
        mean of the two sides' models evaluated at that temperature,
        scaled by the limiter factor on flagged material interfaces.
        Domain-boundary faces carry kappa = 0.
        """
        mesh, rid = self.mesh, self.region_id
        nx, ny = mesh.nx, mesh.ny
        T2 = T.reshape(ny, nx)
        r2 = rid.reshape(ny, nx)
        kappa_x = np.zeros((ny, nx + 1))
        kappa_y = np.zeros((ny + 1, nx))
        f_x = np.ones((ny, nx + 1))
        f_y = np.ones((ny + 1, nx))
        flag_x = np.zeros((ny, nx + 1), dtype=np.bool_)
        flag_y = np.zeros((ny + 1, nx), dtype=np.bool_)
        tau_x = np.zeros((ny, nx + 1))
        tau_y = np.zeros((ny + 1, nx))

        def fill(axis):
            if axis == 0:
                Tl, Tr = T2[:, :-1], T2[:, 1:]
                rl, rr = r2[:, :-1], r2[:, 1:]
                dl = np.broadcast_to(mesh.dx[:-1], Tl.shape)
                dr = np.broadcast_to(mesh.dx[1:], Tl.shape)
                kap, ff, fl, ta = (kappa_x[:, 1:-1], f_x[:, 1:-1],
                                   flag_x[:, 1:-1], tau_x[:, 1:-1])
            else:
                Tl, Tr = T2[:-1, :], T2[1:, :]
                rl, rr = r2[:-1, :], r2[1:, :]
                dl = np.broadcast_to(mesh.dy[:-1, None], Tl.shape)
                dr = np.broadcast_to(mesh.dy[1:, None], Tl.shape)
                kap, ff, fl, ta = (kappa_y[1:-1, :], f_y[1:-1, :],
                                   flag_y[1:-1, :], tau_y[1:-1, :])
            T_face = 0.5 * (Tl + Tr)
            tf = T_face.ravel()
            half = np.zeros_like(tf)
            sig_l = np.zeros_like(tf)
            sig_r = np.zeros_like(tf)
            for reg in range(len(self.regions)):
                ml = (rl.ravel() == reg)
                if np.any(ml):
                    sp_, _, ka_, _, _ = self.table.lookup(reg, tf[ml])
                    half[ml] += 0.5 * ka_
                    sig_l[ml] = sp_
                mr = (rr.ravel() == reg)
                if np.any(mr):
                    sp_, _, ka_, _, _ = self.table.lookup(reg, tf[mr])
                    half[mr] += 0.5 * ka_
                    sig_r[mr] = sp_
            kap[...] = half.reshape(T_face.shape)
            if self.limiter_enabled:
                jump = np.abs(Tl - Tr) / (Tl + Tr)
                active = (rl != rr) & (jump > self.limiter_threshold)
                if np.any(active):
                    am = active.ravel()
                    sig = np.maximum(sig_l, sig_r)[am]
                    tl, tr_ = Tl.ravel()[am], Tr.ravel()[am]
                    dxl, dxr = dl.ravel()[am], dr.ravel()[am]
                    taus = np.empty(len(sig))
                    fs = np.empty(len(sig))
                    for k in range(len(sig)):
                        taus[k], fs[k] = interface_limiter(
                            tl[k], tr_[k], dxl[k], dxr[k], sig[k], self.dt,
                            self.eps, self.consts)
                    ff.ravel()[am] = fs
                    ta.ravel()[am] = taus
                    fl.ravel()[am] = True
                    kap.ravel()[am] *= fs

        fill(0)
        fill(1)
        return (kappa_x, kappa_y, f_x, f_y, flag_x, tau_x, flag_y, tau_y)

    def limiter_for_tracking(self, T_n):
        """(flag_x, tau_x, flag_y, tau_y) consumed by the tracker, or
        None when the limiter is disabled."""
        if not self.limiter_enabled:
            return None
        _, _, _, _, flag_x, tau_x, flag_y, tau_y = \
            self.assemble_face_kappa(T_n)
        return flag_x, tau_x, flag_y, tau_y

    # -- linear step ----------------------------------------------------

    def _flux_operator(self, kappa_x, kappa_y):
        mesh = self.mesh
        nx, ny = mesh.nx, mesh.ny
        n = nx * ny
        rows, cols, vals = [], [], []
        if nx > 1:
            h = 0.5 * (mesh.dx[:-1] + mesh.dx[1:])           # (nx-1,)
            kap = kappa_x[:, 1:-1]                            # (ny, nx-1)
            jj = np.repeat(np.arange(ny), nx - 1)
            ii = np.tile(np.arange(nx - 1), ny)
            left = jj * nx + ii
            right = left + 1
            coef_l = (kap / (mesh.dx[None, :-1] * h[None, :])).ravel()
            coef_r = (kap / (mesh.dx[None, 1:] * h[None, :])).ravel()
            rows += [left, left, right, right]
            cols += [right, left, left, right]
            vals += [coef_l, -coef_l, coef_r, -coef_r]
        if ny > 1:
            h = 0.5 * (mesh.dy[:-1] + mesh.dy[1:])           # (ny-1,)
            kap = kappa_y[1:-1, :]                            # (ny-1, nx)
            jj = np.repeat(np.arange(ny - 1), nx)
            ii = np.tile(np.arange(nx), ny - 1)
            low = jj * nx + ii
            high = low + nx
            coef_lo = (kap / (mesh.dy[:-1, None] * h[:, None])).ravel()
            coef_hi = (kap / (mesh.dy[1:, None] * h[:, None])).ravel()
            rows += [low, low, high, high]
            cols += [high, low, low, high]
            vals += [coef_lo, -coef_lo, coef_hi, -coef_hi]
        if not rows:
            return sp.csr_matrix((n, n))
        return sp.csr_matrix(
            (np.concatenate(vals),
             (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    def linear_step(self, coeffs, rho_n, Ur_n, par_net):
        """One lagged-coefficient solve; returns (rho, Ur, report bits).

        U_r is eliminated per cell:
            U_r = (eps^2 Cv U_r^n/dt + beta_eff (A - gamma E_free)
                   + beta_eff gamma rho) / (eps^2 Cv/dt
                   + beta_eff sigma_p)
        and the five-point system in rho follows from the rho update
        with S = A + gamma (rho - E_free).
        """
        c, eps, dt = self.consts.c, self.eps, self.dt
        beta = coeffs.beta_eff if coeffs.beta_eff is not None \
            else coeffs.beta
        D = eps**2 * coeffs.cv / dt + beta * coeffs.sigma_p
        P = (eps**2 * coeffs.cv * Ur_n / dt
             + beta * (coeffs.A - coeffs.gamma * coeffs.E_free)) / D
        Q = beta * coeffs.gamma / D
        L = self._flux_operator(coeffs.kappa_x, coeffs.kappa_y)
        cdte = c * dt / eps**2
        # half-range leak of the in-step emitted field through open domain
        # boundaries; its brightness is pinned to the material (U_r), which
        # the implicit solve keeps regenerating while it drains
        chi = (coeffs.chi_escape if coeffs.chi_escape is not None
               else np.zeros_like(rho_n))
        diag = 1.0 + cdte * (coeffs.gamma - coeffs.sigma_p * Q) + chi * Q
        M = sp.diags(diag) + L @ sp.diags(Q)
        rhs = (rho_n + par_net
               - cdte * (coeffs.A - coeffs.gamma * coeffs.E_free
                         - coeffs.sigma_p * P)
               - L @ P - chi * P)
        n = M.shape[0]
        lin_iters = 0
        if n <= 10_000:
            rho = spla.spsolve(sp.csc_matrix(M), rhs)
        else:
            precond = sp.diags(1.0 / M.diagonal())
            counter = [0]

            def cb(_):
                counter[0] += 1

            rho, info = spla.bicgstab(M, rhs, rtol=self.linear_tol,
                                      atol=0.0, M=precond, callback=cb,
                                      maxiter=2000)
            lin_iters = counter[0]
            if info != 0:
                raise RuntimeError(
                    f"linear solver failed to converge (info={info})")
        rnorm = np.linalg.norm(M @ rho - rhs)
        rhsnorm = np.linalg.norm(rhs)
        if rhsnorm > 0 and rnorm / rhsnorm > 100 * self.linear_tol:
            raise RuntimeError(
                f"linear residual {rnorm / rhsnorm:.2e} above tolerance")
        Ur = P + Q * rho
        floor_ur = self.consts.a * c * T_FLOOR**4
        clamps = int(np.sum(Ur < 0.0))
        if clamps:
            Ur = np.maximum(Ur, floor_ur)
        return rho, Ur, lin_iters, clamps

    # -- Picard loop ----------------------------------------------------

    def picard_update(self, fields, tallies):
        """Implicit step from fields at t_n with this step's tallies.

        Coefficients are lagged at the current iterate temperature; the
        loop stops when the max relative temperature change drops below
        tol.  Returns (new MacroFields, SolveReport).
        """
        mesh = self.mesh
        consts = self.consts
        rho_n = fields.rho
        Ur_n = fields.Ur
        T_n = fields.T
        par_net = (tallies.E_final - tallies.E_init) / self.vol
        E_free = tallies.E_census / self.vol
        _, _, cv_reg = pack_regions(self.regions)
        cv = cv_reg[self.region_id]
        T_m = T_n.copy()
        A = absorption_tally_A(tallies.census, T_m, self.region_id,
                               self.regions, self.vol)
        report = SolveReport()
        rho = rho_n.copy()
        Ur = Ur_n.copy()
        omega = 1.0           # relaxation, reduced on oscillation
        prev_update = None
        for it in range(1, self.max_iter + 1):
            sigma_p, gamma, acc, gbar = self.table.per_cell(self.region_id,
                                                            T_m)
            beta = 4.0 * consts.a * consts.c * T_m**3
            dT = T_m - T_n
            with np.errstate(divide="ignore", invalid="ignore"):
                beta_sec = np.where(
                    np.abs(dT) > 1e-12 * np.maximum(T_m, T_n),
                    (consts.a * consts.c * (T_m**4 - T_n**4)) / dT, beta)
            if self._needs_A_update and it > 1:
                A = absorption_tally_A(tallies.census, T_m, self.region_id,
                                       self.regions, self.vol)
            (kappa_x, kappa_y, f_x, f_y, flag_x, _, flag_y, _) = \
                self.assemble_face_kappa(T_m)
            chi = (consts.c * self.dt / (4.0 * self.eps)
                   * self.open_edge_length / self.vol * gbar)
            coeffs = MacroCoefficients(
                sigma_p=sigma_p, beta=beta, cv=cv, gamma=gamma, A=A,
                E_free=E_free, kappa_x=kappa_x, kappa_y=kappa_y, f_x=f_x,
                f_y=f_y, beta_eff=beta_sec, chi_escape=chi)
            rho, Ur, lin_iters, clamps = self.linear_step(
                coeffs, rho_n, Ur_n, par_net)
            report.linear_solver_iterations += lin_iters
            report.ur_clamps += clamps
            report.limiter_faces = int(flag_x.sum() + flag_y.sum())
            T_new = np.maximum(
                (np.maximum(Ur, 0.0) / (consts.a * consts.c)) ** 0.25,
                T_FLOOR)
            # changes below 1e-3 * T_floor are physically empty wobble
            # (quartic-root noise amplification near the floor)
            dT_abs = np.abs(T_new - T_m)
            dT_abs[dT_abs < 1e-3 * T_FLOOR] = 0.0
            resid = float(np.max(dT_abs / np.maximum(T_m, T_FLOOR)))
            report.picard_iterations = it
            report.final_residual = resid
            report.boundary_emission_loss = float(np.dot(chi * self.vol,
                                                         Ur))
            if resid < self.tol:
                T_m = T_new
                report.converged = True
                break
            # stiff opacities (sigma ~ T^-3) can make the plain iteration
            # ping-pong at heating fronts; damp on update anti-correlation
            update = T_new - T_m
            if prev_update is not None and float(
                    np.dot(update, prev_update)) < 0.0:
                omega = max(0.5 * omega, 0.1)
            else:
                omega = min(1.0, 1.4 * omega)
            prev_update = update
            T_m = np.maximum(T_m + omega * update, T_FLOOR)
        if not report.converged and not self.allow_nonconverged:
            raise RuntimeError(
                f"Picard iteration did not converge: residual "
                f"{report.final_residual:.3e} after "
                f"{report.picard_iterations} iterations")
        # re-derive T from the final U_r so the pair is exactly consistent
        T_out = np.maximum(
            (np.maximum(Ur, 0.0) / (consts.a * consts.c)) ** 0.25, T_FLOOR)
        out = MacroFields(rho=rho, T=T_out, Ur=Ur, consts=consts)
        return out, report
