"""End-of-step re-emission: close the particle distribution by sampling
the absorbed/emitted energy E+ as new equal-weight particles."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import W
from .radiometry import PhysConstants, planck_b, quadrature_for
from .transport import new_particle_array, pack_regions


@dataclass
class ResamplePlan:
    """Per-cell emission energy, particle counts, and equal weights."""

    E_plus: np.ndarray
    N_r: np.ndarray
    w_each: np.ndarray
    s1: np.ndarray = None
    s2: np.ndarray = None


def compute_emission_energy(rho_new, census_weight_density):
    """E+ = rho^{n+1} - E_census/V; may be negative from sampling noise
    (the count rule then produces no particles and the energy stays in
    rho)."""
    return np.asarray(rho_new) - np.asarray(census_weight_density)


def particle_count(E_plus_times_V, w_ref):
    """(N_r, w_each): zero below w_ref, else ceiling with equal weights."""
    if w_ref <= 0:
        raise ValueError("w_ref must be positive")
    e = np.atleast_1d(np.asarray(E_plus_times_V, dtype=np.float64))
    n = np.where(e < w_ref, 0, np.ceil(e / w_ref)).astype(np.int64)
    w = np.divide(e, n, out=np.zeros_like(e), where=n > 0)
    if np.ndim(E_plus_times_V) == 0:
        return int(n[0]), float(w[0])
    return n, w


def minmod(a, b):
    """sign(a) min(|a|, |b|) when signs agree, else 0."""
    a_arr = np.asarray(a, dtype=np.float64)
    b_arr = np.asarray(b, dtype=np.float64)
    out = np.where(np.sign(a_arr) == np.sign(b_arr),
                   np.sign(a_arr) * np.minimum(np.abs(a_arr),
                                               np.abs(b_arr)), 0.0)
    return float(out) if out.ndim == 0 else out


def _slopes(E_plus, mesh):
    """Minmod-limited slopes of E+ for tilted position sampling."""
    nx, ny = mesh.nx, mesh.ny
    e2 = E_plus.reshape(ny, nx)
    s1 = np.zeros_like(e2)
    s2 = np.zeros_like(e2)
    if nx > 1:
        hx = 0.5 * (mesh.dx[:-1] + mesh.dx[1:])
        fwd = (e2[:, 1:] - e2[:, :-1]) / hx[None, :]
        s1[:, 1:-1] = minmod(fwd[:, 1:], fwd[:, :-1])
    if ny > 1:
        hy = 0.5 * (mesh.dy[:-1] + mesh.dy[1:])
        fwd = (e2[1:, :] - e2[:-1, :]) / hy[:, None]
        s2[1:-1, :] = minmod(fwd[1:, :], fwd[:-1, :])
    return s1.ravel(), s2.ravel()


def build_plan(rho_new, census_density, volumes, w_ref, mesh=None,
               tilt=False):
    """Emission energies and counts for every cell."""
    E_plus = compute_emission_energy(rho_new, census_density)
    N_r, w_each = particle_count(E_plus * volumes, w_ref)
    s1 = s2 = None
    if tilt:
        if mesh is None:
            raise ValueError("tilted sampling needs the mesh")
        s1, s2 = _slopes(E_plus, mesh)
    return ResamplePlan(E_plus=E_plus, N_r=N_r, w_each=w_each, s1=s1, s2=s2)


def sample_emitted(plan, mesh, region_id, regions, T_new, dt, eps, seed,
                   step, table=None, tilt=False, consts=PhysConstants()):
    """Particles realizing the plan: isotropic directions, emission-law
    photon energies at the converged temperature, positions uniform in the
    cell (or tilted against the reconstructed linear profile).

    Cells whose expected rejection acceptance is below 1e-6 fall back to
    tabulated-CDF inversion on the quadrature grid; the returned
    ``fallback_cells`` counts them.
    """
    counts = plan.N_r
    total = int(counts.sum())
    parts = new_particle_array(total)
    if total == 0:
        return parts, 0
    cells = np.repeat(np.arange(mesh.n_cells, dtype=np.int64), counts)
    weights = np.repeat(plan.w_each, counts)
    t_rows = np.repeat(np.asarray(T_new, dtype=np.float64), counts)
    region_rows = region_id[cells]
    kinds, params, _ = pack_regions(regions)
    cdt = consts.c * dt / eps**2

    # flag degenerate-acceptance cells for the CDF fallback
    if table is not None:
        _, _, acc, _ = table.per_cell(region_id, np.asarray(T_new))
        row_ok = acc[cells] >= 1e-6
    else:
        row_ok = np.ones(total, dtype=np.bool_)
    n_fallback_cells = 0

    if tilt:
        e0 = np.repeat(plan.E_plus, counts)
        s1 = np.repeat(plan.s1, counts)
        s2 = np.repeat(plan.s2, counts)
    else:
        e0 = s1 = s2 = np.empty(0, dtype=np.float64)

    kernels.fill_cell_sampled(
        parts, cells, weights, t_rows, mesh.x_edges, mesh.y_edges, mesh.nx,
        np.uint64(seed), kernels.P_RESAMPLE, step, True, region_rows, kinds,
        params, cdt, tilt, e0, s1, s2)

    if not np.all(row_ok):
        bad_rows = np.flatnonzero(~row_ok)
        bad_cells = np.unique(cells[bad_rows])
        n_fallback_cells = len(bad_cells)
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), int(step), 0xFA11BACC]))
        for cell in bad_cells:
            rows = bad_rows[cells[bad_rows] == cell]
            model = regions[region_id[cell]].opacity
            T_c = float(np.asarray(T_new)[cell])
            quad = quadrature_for(model, T_c)
            density = (quad.w * planck_b(quad.u, T_c)
                       * (-np.expm1(-model.evaluate(quad.u, T_c) * cdt)))
            cdf = np.cumsum(density)
            if cdf[-1] <= 0.0:
                # nothing absorbable at all: keep the Planck draw
                continue
            cdf /= cdf[-1]
            xi = rng.random(len(rows))
            idx = np.minimum(np.searchsorted(cdf, xi), len(quad.u) - 1)
            parts[rows, kernels.U] = quad.u[idx]
    assert math.isclose(float(parts[:, W].sum()),
                        float((plan.w_each * plan.N_r).sum()), rel_tol=1e-12)
    return parts, n_fallback_cells
