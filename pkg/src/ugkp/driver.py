"""Time-stepping orchestration and CSV output writing."""

import logging
import os
import time as _time

import numpy as np

from . import resample as rs
from ._accel import NUMBA_ENABLED, set_num_threads
from .fv_solver import MacroSolver
from .mesh import INFLOW_PLANCK, MacroFields, assign_regions, EDGE_NAMES
from .transport import (CensusTable, new_particle_array,
                        sample_boundary_particles, sample_initial_particles,
                        spectrum_tally, track_all)

log = logging.getLogger("ugkp")

_M64 = (1 << 64) - 1


def _edge_seed(seed, edge_idx):
    return (int(seed) * 1000003 + 7919 * (edge_idx + 1)) & _M64


def _fmt(x):
    return repr(float(x))


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


SNAPSHOT_HEADER = "step,time_ns,i,j,x_cm,y_cm,T_keV,Tr_keV,rho,Ur,n_census"
SPECTRUM_HEADER = "u_lo_keV,u_hi_keV,intensity"
TIMESERIES_HEADER = ("step,time_ns,total_energy,balance_residual,"
                    "n_particles,picard_iters,wall_ms")


def write_snapshot(state_rows, path):
    """One row per cell, LF endings, shortest round-trip floats."""
    lines = [SNAPSHOT_HEADER]
    for row in state_rows:
        step, t, i, j, x, y, T, Tr, rho, Ur, nc = row
        lines.append(f"{step},{_fmt(t)},{i},{j},{_fmt(x)},{_fmt(y)},"
                     f"{_fmt(T)},{_fmt(Tr)},{_fmt(rho)},{_fmt(Ur)},{nc}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_spectrum(edges, intensity, path):
    lines = [SPECTRUM_HEADER]
    for k in range(len(intensity)):
        lines.append(f"{_fmt(edges[k])},{_fmt(edges[k + 1])},"
                     f"{_fmt(intensity[k])}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_timeseries(rows, path):
    lines = [TIMESERIES_HEADER]
    for row in rows:
        step, t, etot, bal, npart, iters, wall = row
        lines.append(f"{step},{_fmt(t)},{_fmt(etot)},{_fmt(bal)},"
                     f"{npart},{iters},{_fmt(wall)}")
    _atomic_write(path, "\n".join(lines) + "\n")


class Simulation:
    """Owns the per-step UGKP cycle: track, macro solve, re-sample,
    boundary injection for the next step."""

    def __init__(self, cfg, out_dir=None, seed=None, workers=1):
        self.cfg = cfg
        self.consts = cfg.constants()
        self.eps = cfg.epsilon
        self.mesh = cfg.build_mesh()
        self.regions = cfg.build_regions()
        self.region_id = assign_regions(self.mesh, self.regions)
        self.boundaries = cfg.build_boundaries()
        self.seed = cfg.seed if seed is None else int(seed)
        self.out_dir = cfg.out_dir if out_dir is None else out_dir
        self.dt = cfg.dt
        self.n_steps = max(0, int(round(cfg.t_end / cfg.dt)))
        self.w_ref = cfg.resolved_w_ref(self.mesh)
        self.vol = self.mesh.volumes()
        self.solver = MacroSolver(
            self.mesh, self.region_id, self.regions, self.dt, self.eps,
            self.consts, limiter_enabled=cfg.limiter_enabled,
            limiter_threshold=cfg.limiter_threshold, tol=cfg.picard_tol,
            max_iter=cfg.picard_max_iter, linear_tol=cfg.linear_tol,
            allow_nonconverged=cfg.allow_nonconverged,
            boundaries=self.boundaries)
        if workers > 1 and NUMBA_ENABLED:
            set_num_threads(workers)

        rho0, T0, Ts = cfg.initial_fields(self.mesh)
        self.fields = MacroFields(rho=rho0, T=T0, consts=self.consts)
        self.particles = sample_initial_particles(
            self.mesh, rho0, Ts, self.w_ref, self.seed, cap=cfg.init_cap)
        self._census_counts = np.bincount(
            self._cells_of(self.particles), minlength=self.mesh.n_cells)
        self.inflow_edges = [
            (k, name, self.boundaries.edge(name)[1])
            for k, name in enumerate(EDGE_NAMES)
            if self.boundaries.edge(name)[0] == INFLOW_PLANCK]
        self.step_index = 0
        self.time = 0.0
        self.boundary_batch = self._sample_boundary(step=0)
        self.total_events = 0
        self.resample_fallback_cells = 0
        self.timeseries_rows = []
        self.last_census = self._initial_census()

    # -- helpers ---------------------------------------------------------

    def _cells_of(self, parts):
        xi = np.minimum(np.searchsorted(self.mesh.x_edges, parts[:, 1],
                                        side="right") - 1, self.mesh.nx - 1)
        yj = np.minimum(np.searchsorted(self.mesh.y_edges, parts[:, 2],
                                        side="right") - 1, self.mesh.ny - 1)
        return np.maximum(yj, 0) * self.mesh.nx + np.maximum(xi, 0)

    def _initial_census(self):
        cells = self._cells_of(self.particles)
        order = np.argsort(cells, kind="stable")
        counts = np.bincount(cells, minlength=self.mesh.n_cells)
        offsets = np.zeros(self.mesh.n_cells + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        return CensusTable(offsets, self.particles[order, 0].copy(),
                           self.particles[order, 6].copy())

    def _sample_boundary(self, step):
        batches = []
        for k, name, tb in self.inflow_edges:
            batches.append(sample_boundary_particles(
                self.mesh, name, tb, self.dt, self.w_ref,
                _edge_seed(self.seed, k), step, self.eps, self.consts))
        if not batches:
            return new_particle_array(0)
        return np.concatenate(batches, axis=0)

    def total_energy(self):
        """Sum of V (rho/c + Cv T) in GJ."""
        cv = np.array([r.cv for r in self.regions])[self.region_id]
        return float(np.dot(self.vol,
                            self.fields.rho / self.consts.c
                            + cv * self.fields.T))

    # -- one UGKP cycle ----------------------------------------------------

    def step(self):
        t0 = _time.perf_counter()
        cfg = self.cfg
        step = self.step_index + 1
        e_before = self.total_energy()

        limiter = self.solver.limiter_for_tracking(self.fields.T)
        parts = np.concatenate([self.particles, self.boundary_batch],
                               axis=0)
        n_dom = len(self.particles)
        tallies, survivors = track_all(
            parts, n_dom, self.mesh, self.region_id, self.regions,
            self.fields.T, self.boundaries, self.dt, self.seed, step,
            self.eps, self.consts, limiter)

        new_fields, report = self.solver.picard_update(self.fields, tallies)

        plan = rs.build_plan(new_fields.rho, tallies.E_census / self.vol,
                             self.vol, self.w_ref)
        emitted, n_fallback = rs.sample_emitted(
            plan, self.mesh, self.region_id, self.regions, new_fields.T,
            self.dt, self.eps, self.seed, step, table=self.solver.table,
            consts=self.consts)
        self.resample_fallback_cells += n_fallback

        self.fields = new_fields
        self.particles = np.concatenate([survivors, emitted], axis=0)
        self.last_census = tallies.census
        self._census_counts = np.diff(tallies.census.offsets)
        self.boundary_batch = self._sample_boundary(step)
        self.step_index = step
        self.time = step * self.dt
        self.total_events += tallies.n_events

        e_after = self.total_energy()
        balance = (e_after - e_before
                   - (tallies.E_inflow - tallies.E_outflow
                      - report.boundary_emission_loss) / self.consts.c)
        report.energy_balance_residual = balance
        wall_ms = (_time.perf_counter() - t0) * 1e3
        self.timeseries_rows.append(
            (step, self.time, e_after, balance, len(parts),
             report.picard_iterations, wall_ms))
        return tallies, report

    # -- outputs -----------------------------------------------------------

    def snapshot_rows(self):
        rows = []
        ac = self.consts.a * self.consts.c
        xc, yc = self.mesh.centers()
        for cell in range(self.mesh.n_cells):
            i, j = cell % self.mesh.nx, cell // self.mesh.nx
            rho = self.fields.rho[cell]
            tr = (max(rho, 0.0) / ac) ** 0.25
            rows.append((self.step_index, self.time, i, j, xc[cell],
                         yc[cell], self.fields.T[cell], tr, rho,
                         self.fields.Ur[cell],
                         int(self._census_counts[cell])))
        return rows

    def write_snapshot_file(self):
        path = os.path.join(self.out_dir,
                            f"snapshot_{self.step_index:06d}.csv")
        write_snapshot(self.snapshot_rows(), path)
        return path

    def write_spectrum_file(self):
        edges = self.cfg.resolved_spectrum_edges()
        total_vol = float(self.vol.sum())
        intensity = spectrum_tally(self.last_census, edges, total_vol)
        path = os.path.join(self.out_dir,
                            f"spectrum_{self.step_index:06d}.csv")
        write_spectrum(edges, intensity, path)
        return path

    def flush_timeseries(self):
        write_timeseries(self.timeseries_rows,
                         os.path.join(self.out_dir, "timeseries.csv"))

    def run(self):
        os.makedirs(self.out_dir, exist_ok=True)
        self.write_snapshot_file()
        report_every = max(1, self.n_steps // 20)
        t_start = _time.perf_counter()
        for n in range(self.n_steps):
            tallies, report = self.step()
            if self.cfg.snapshot_every and \
                    self.step_index % self.cfg.snapshot_every == 0:
                self.write_snapshot_file()
            if self.cfg.spectrum_every and \
                    self.step_index % self.cfg.spectrum_every == 0:
                self.write_spectrum_file()
            if self.step_index % 50 == 0:
                self.flush_timeseries()
            if self.step_index % report_every == 0:
                log.info(
                    "step %d/%d t=%.4g ns T=[%.4g, %.4g] keV "
                    "particles=%d picard=%d balance=%.2e",
                    self.step_index, self.n_steps, self.time,
                    self.fields.T.min(), self.fields.T.max(),
                    len(self.particles), report.picard_iterations,
                    report.energy_balance_residual)
        if self.n_steps and self.step_index % max(
                1, self.cfg.snapshot_every or self.n_steps) != 0:
            pass
        self.write_snapshot_file()
        self.write_spectrum_file()
        self.flush_timeseries()
        wall = _time.perf_counter() - t_start
        summary = {
            "steps": self.step_index,
            "time_ns": self.time,
            "wall_s": wall,
            "total_energy_GJ": self.total_energy(),
            "n_particles": len(self.particles),
            "tracked_events": self.total_events,
            "T_max_keV": float(self.fields.T.max()),
            "T_min_keV": float(self.fields.T.min()),
            "resample_fallback_cells": self.resample_fallback_cells,
        }
        lines = [f"{k} = {v}" for k, v in summary.items()]
        _atomic_write(os.path.join(self.out_dir, "summary.txt"),
                      "\n".join(lines) + "\n")
        return summary


def run_simulation(cfg, out_dir=None, seed=None, workers=1):
    """Run a configured simulation; returns the summary dict."""
    sim = Simulation(cfg, out_dir=out_dir, seed=seed, workers=workers)
    return sim.run()
