"""Monte Carlo particle representation: sampling, tracking, tallies."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .kernels import ABSORBED, CENSUS, NCOL, OUTFLOW, TLOC, TRACK_ERROR, U, W
from .mesh import INFLOW_PLANCK, EDGE_NAMES
from .radiometry import PhysConstants


def pack_regions(regions):
    """(kinds, params, cv) arrays for the kernels."""
    kinds = np.array([r.opacity.kind for r in regions], dtype=np.int64)
    params = np.array([r.opacity.params for r in regions], dtype=np.float64)
    cv = np.array([r.cv for r in regions], dtype=np.float64)
    return kinds, params, cv


@dataclass
class CensusTable:
    """Per-cell (w, u) lists of surviving particles, stored flat.

    Rows for cell k live in [offsets[k], offsets[k+1]); the row order is
    the deterministic tracking order.
    """

    offsets: np.ndarray
    w: np.ndarray
    u: np.ndarray

    @classmethod
    def empty(cls, n_cells):
        return cls(np.zeros(n_cells + 1, dtype=np.int64),
                   np.empty(0), np.empty(0))

    @property
    def total_weight(self):
        return float(self.w.sum())


@dataclass
class StepTallies:
    """Per-step particle bookkeeping feeding the macroscopic solve.

    E_final holds every tracked particle's weight binned at its final
    resting cell: census position for survivors, absorption point for
    absorbed particles (in-flowing particles included).  Each particle's
    full weight lands in exactly one of census/absorbed/outflow, so

        sum(E_init) + E_inflow == sum(E_census) + sum(E_absorbed)
                                  + E_outflow

    holds up to floating summation order.
    """

    E_init: np.ndarray
    E_census: np.ndarray
    E_absorbed: np.ndarray
    E_final: np.ndarray
    E_inflow: float
    E_outflow: float
    census: CensusTable
    n_events: int
    n_census: int
    n_absorbed: int
    n_outflow: int

    def weight_balance_residual(self, weights_in, weights_out):
        """fsum balance of the actual per-particle weight multisets."""
        lhs = math.fsum(weights_in)
        rhs = math.fsum(weights_out)
        return lhs - rhs


def new_particle_array(n):
    return np.zeros((n, NCOL), dtype=np.float64)


def sample_initial_particles(mesh, rho0, T_spectrum, w_ref, rng_seed,
                             cap=20_000_000):
    """Equal-weight particles reproducing the initial intensity field.

    Per cell: N = ceil(rho0 * V / w_ref) particles of weight rho0*V/N,
    positions uniform in the cell, directions isotropic, photon energy
    Planck-distributed at the cell's spectrum temperature.
    """
    if w_ref <= 0:
        raise ValueError("w_ref must be positive")
    rho0 = np.asarray(rho0, dtype=np.float64)
    T_spectrum = np.asarray(T_spectrum, dtype=np.float64)
    vol = mesh.volumes()
    energy = rho0 * vol
    counts = np.where(energy > 0.0, np.ceil(energy / w_ref), 0.0)
    counts = counts.astype(np.int64)
    total = int(counts.sum())
    if total > cap:
        raise ValueError(
            f"initial sampling would create {total} particles "
            f"(cap {cap}); increase particles.w_ref")
    cells = np.repeat(np.arange(mesh.n_cells, dtype=np.int64), counts)
    weights = np.repeat(
        np.divide(energy, counts, out=np.zeros_like(energy),
                  where=counts > 0), counts)
    t_spec = np.repeat(T_spectrum, counts)
    parts = new_particle_array(total)
    dummy = np.empty(0, dtype=np.float64)
    dummy_i = np.empty(0, dtype=np.int64)
    dummy_p = np.empty((1, 3), dtype=np.float64)
    kernels.fill_cell_sampled(
        parts, cells, weights, t_spec, mesh.x_edges, mesh.y_edges, mesh.nx,
        np.uint64(rng_seed), kernels.P_INIT, 0, False, dummy_i,
        np.zeros(1, dtype=np.int64), dummy_p, 0.0, False, dummy, dummy,
        dummy)
    return parts


def boundary_weight(T_b, length, dt, eps=1.0, consts=PhysConstants()):
    """Time-integrated inflow of rho through an edge segment.

    W = dt * L * (c/eps) * (a c T_b^4) / 4, the one-way flux of an
    isotropic Planckian at T_b.
    """
    return dt * length * consts.c / eps * consts.a * consts.c * T_b**4 / 4.0


def sample_boundary_particles(mesh, edge, T_b, dt, w_ref, rng_seed, step,
                              eps=1.0, consts=PhysConstants()):
    """Inflow particles for one edge over one step.

    One equal-weight batch per boundary cell segment; the injected weight
    equals the analytic W of each segment exactly.  Directions follow the
    cosine law about the inward normal; emission times are uniform in the
    step, and particles are tracked only for the remaining fraction.
    """
    if w_ref <= 0:
        raise ValueError("w_ref must be positive")
    if edge in ("left", "right"):
        seg_edges = mesh.y_edges
        fixed = mesh.x_edges[0] if edge == "left" else mesh.x_edges[-1]
        axis, inward = 0, (1.0 if edge == "left" else -1.0)
    elif edge in ("bottom", "top"):
        seg_edges = mesh.x_edges
        fixed = mesh.y_edges[0] if edge == "bottom" else mesh.y_edges[-1]
        axis, inward = 1, (1.0 if edge == "bottom" else -1.0)
    else:
        raise ValueError(f"unknown edge {edge!r}")
    lengths = np.diff(seg_edges)
    w_seg = boundary_weight(T_b, lengths, dt, eps, consts)
    counts = np.ceil(w_seg / w_ref).astype(np.int64)
    counts = np.maximum(counts, 1)
    total = int(counts.sum())
    lo = np.repeat(seg_edges[:-1], counts)
    hi = np.repeat(seg_edges[1:], counts)
    weights = np.repeat(w_seg / counts, counts)
    parts = new_particle_array(total)
    kernels.fill_boundary_sampled(parts, lo, hi, fixed, axis, inward, T_b,
                                  dt, np.uint64(rng_seed), step)
    parts[:, W] = weights
    return parts


def distance_to_collision(sigma, eps=1.0, rng=None, xi=None, tau=None,
                          consts=PhysConstants()):
    """Sampled distance to the next absorption event.

    Baseline (eps/sigma) |ln xi|; with the interface-limiter override tau
    it becomes (c/eps) |ln xi| tau.  sigma below the floor yields an
    effectively infinite distance (capped at 1e30).
    """
    if xi is None:
        xi = 1.0 - rng.random()   # in (0, 1]
    if not 0.0 < xi <= 1.0:
        raise ValueError("xi must lie in (0, 1]")
    if tau is not None:
        return min(consts.c / eps * abs(math.log(xi)) * tau, 1e30)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if sigma < 1e-30:
        return 1e30
    return min(eps / sigma * abs(math.log(xi)), 1e30)


def _limiter_arrays(mesh, limiter):
    if limiter is None:
        z_x = np.zeros(0, dtype=np.bool_)
        z_tx = np.zeros(0, dtype=np.float64)
        z_y = np.zeros(0, dtype=np.bool_)
        z_ty = np.zeros(0, dtype=np.float64)
        return False, z_x, z_tx, z_y, z_ty
    flag_x, tau_x, flag_y, tau_y = limiter
    return True, flag_x.ravel(), tau_x.ravel(), flag_y.ravel(), tau_y.ravel()


def track_all(parts, n_domestic, mesh, region_id, regions, T_n, boundaries,
              dt, seed, step=0, eps=1.0, consts=PhysConstants(),
              limiter=None):
    """Track one step's particle population; return (tallies, survivors).

    parts rows [0, n_domestic) are present at t_n (their weights form
    E_init); the rest are the step's boundary source.  Opacities are
    evaluated at the frozen beginning-of-step temperatures T_n only.
    """
    n = parts.shape[0]
    ncell = mesh.n_cells
    kinds, params, _ = pack_regions(regions)
    status = np.empty(n, dtype=np.int64)
    fcell = np.empty(n, dtype=np.int64)
    events = np.zeros(n, dtype=np.int64)
    E_init = np.zeros(ncell)
    if n_domestic:
        dom = parts[:n_domestic]
        ci = np.minimum(np.searchsorted(mesh.x_edges, dom[:, 1],
                                        side="right") - 1, mesh.nx - 1)
        cj = np.minimum(np.searchsorted(mesh.y_edges, dom[:, 2],
                                        side="right") - 1, mesh.ny - 1)
        np.add.at(E_init, np.maximum(cj, 0) * mesh.nx + np.maximum(ci, 0),
                  dom[:, W])
    E_inflow = float(parts[n_domestic:, W].sum())
    has_lim, fx, tx, fy, ty = _limiter_arrays(mesh, limiter)
    if n:
        kernels.track_kernel(
            parts, mesh.x_edges, mesh.y_edges, mesh.nx, mesh.ny, region_id,
            kinds, params, T_n, boundaries.tracker_codes(), dt, consts.c,
            eps, has_lim, fx, tx, fy, ty, np.uint64(seed), step, status,
            fcell, events)
        if np.any(status == TRACK_ERROR):
            bad = int(np.argmax(status == TRACK_ERROR))
            raise RuntimeError(
                f"particle {bad} exceeded the tracking iteration cap "
                f"(position {parts[bad, 1:3]})")
    surv_mask = status == CENSUS
    abs_mask = status == ABSORBED
    out_mask = status == OUTFLOW
    E_census = np.zeros(ncell)
    E_absorbed = np.zeros(ncell)
    np.add.at(E_census, fcell[surv_mask], parts[surv_mask, W])
    np.add.at(E_absorbed, fcell[abs_mask], parts[abs_mask, W])
    E_final = E_census + E_absorbed
    E_outflow = float(parts[out_mask, W].sum())

    surv = parts[surv_mask]
    surv_cells = fcell[surv_mask]
    order = np.argsort(surv_cells, kind="stable")
    surv = np.ascontiguousarray(surv[order])
    surv[:, TLOC] = 0.0
    counts = np.bincount(surv_cells[order], minlength=ncell)
    offsets = np.zeros(ncell + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    census = CensusTable(offsets, surv[:, W].copy(), surv[:, U].copy())
    tallies = StepTallies(
        E_init=E_init, E_census=E_census, E_absorbed=E_absorbed,
        E_final=E_final, E_inflow=E_inflow, E_outflow=E_outflow,
        census=census, n_events=int(events.sum()),
        n_census=int(surv_mask.sum()), n_absorbed=int(abs_mask.sum()),
        n_outflow=int(out_mask.sum()))
    return tallies, surv


def track_particle(part_row, mesh, region_id, regions, T_n, boundaries, dt,
                   seed=1, step=0, eps=1.0, consts=PhysConstants(),
                   limiter=None):
    """Single-particle tracking; returns (outcome, row, final_cell).

    outcome is one of "census", "absorbed", "outflow".
    """
    parts = np.asarray(part_row, dtype=np.float64).reshape(1, NCOL).copy()
    tallies, surv = track_all(parts, 1, mesh, region_id, regions, T_n,
                              boundaries, dt, seed, step, eps, consts,
                              limiter)
    if tallies.n_census:
        return "census", surv[0], int(np.argmax(tallies.E_census > 0))
    if tallies.n_absorbed:
        return "absorbed", parts[0], int(np.argmax(tallies.E_absorbed > 0))
    return "outflow", parts[0], -1


def spectrum_tally(census, bins, volume):
    """Specific-intensity histogram: I(u) ~ sum_bin(w) / (4 pi V du)."""
    bins = np.asarray(bins, dtype=np.float64)
    if np.any(np.diff(bins) <= 0):
        raise ValueError("bins must be sorted increasing")
    wsum, _ = np.histogram(census.u, bins=bins, weights=census.w)
    du = np.diff(bins)
    return wsum / (4.0 * math.pi * volume * du)


def spectrum_noise(census, bins, volume):
    """Per-bin one-sigma statistical error of spectrum_tally."""
    bins = np.asarray(bins, dtype=np.float64)
    w2, _ = np.histogram(census.u, bins=bins, weights=census.w**2)
    du = np.diff(bins)
    return np.sqrt(w2) / (4.0 * math.pi * volume * du)
