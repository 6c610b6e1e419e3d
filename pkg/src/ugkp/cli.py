"""Command-line interface: run simulations, emit presets, run oracles."""

import argparse
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from . import driver, oracles
from .config import ConfigError, load_config, preset, to_toml
from .mesh import INFLOW_PLANCK, assign_regions

log = logging.getLogger("ugkp")


def _rebin_groups(group_edges, rho_g, bin_edges):
    """Piecewise-constant rebin of per-group intensity onto spectrum bins.

    Returns intensity per unit photon energy per steradian, matching the
    particle spectrum tally.
    """
    density = rho_g / np.diff(group_edges)      # rho per keV
    out = np.zeros(len(bin_edges) - 1)
    for k in range(len(out)):
        lo, hi = bin_edges[k], bin_edges[k + 1]
        a = np.maximum(group_edges[:-1], lo)
        b = np.minimum(group_edges[1:], hi)
        overlap = np.maximum(b - a, 0.0)
        out[k] = float(np.dot(density, overlap)) / (hi - lo)
    return out / (4.0 * np.pi)


def _cmd_run(args):
    cfg = load_config(args.config)
    cfg = cfg.scaled(args.scale_mesh, args.t_end).validate()
    out_dir = args.out or cfg.out_dir
    summary = driver.run_simulation(cfg, out_dir=out_dir, seed=args.seed,
                                    workers=args.workers)
    for k, v in summary.items():
        print(f"{k} = {v}")
    return 0


def _cmd_preset(args):
    cfg = preset(args.name, args.scale_mesh, args.t_end)
    text = to_toml(cfg)
    if args.print or not args.out:
        print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{args.name}.toml")
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        print(f"wrote {path}", file=sys.stderr)
    return 0


def _oracle_homogeneous(cfg, out_dir, groups):
    model = cfg.materials[0].opacity()
    res = oracles.multigroup_homogeneous_solve(
        cfg.T0, model, cfg.materials[0].cv, groups, cfg.dt, cfg.t_end,
        spectrum_T=cfg.spectrum_T, radiation_T=cfg.radiation_T,
        eps=cfg.epsilon, consts=cfg.constants())
    mesh = cfg.build_mesh()
    consts = cfg.constants()
    ac = consts.a * consts.c
    rho_tot = float(res.rho_g.sum())
    T = float(res.T_hist[-1])
    xc, yc = mesh.centers()
    rows = [(len(res.times) - 1, res.times[-1], c % mesh.nx, c // mesh.nx,
             xc[c], yc[c], T, (rho_tot / ac) ** 0.25, rho_tot, ac * T**4, 0)
            for c in range(mesh.n_cells)]
    driver.write_snapshot(rows, os.path.join(out_dir, "snapshot_final.csv"))
    edges = cfg.resolved_spectrum_edges()
    intensity = _rebin_groups(res.u_edges, res.rho_g, edges)
    driver.write_spectrum(edges, intensity,
                          os.path.join(out_dir, "spectrum_final.csv"))
    print(f"final material T = {T} keV")
    print(f"conservation drift = {res.conservation_drift}")
    return 0


def _oracle_diffusion(cfg, out_dir):
    mesh = cfg.build_mesh()
    regions = cfg.build_regions()
    region_id = assign_regions(mesh, regions)
    boundary = {}
    for edge in ("left", "right", "bottom", "top"):
        kind, tb = cfg.boundary[edge]
        if kind == INFLOW_PLANCK:
            boundary[edge] = ("dirichlet", tb)
        else:
            boundary[edge] = ("zero-flux", 0.0)
    T_init = np.full(mesh.n_cells, cfg.T0)
    stride = cfg.snapshot_every or 0
    res = oracles.rosseland_diffusion_solve(
        mesh, region_id, regions, T_init, cfg.dt, cfg.t_end,
        boundary=boundary, consts=cfg.constants(),
        snapshot_every=stride)
    consts = cfg.constants()
    ac = consts.a * consts.c
    xc, yc = mesh.centers()
    for t, frame in zip(res.times, res.T_frames):
        step = int(round(t / cfg.dt))
        rows = [(step, t, c % mesh.nx, c // mesh.nx, xc[c], yc[c],
                 frame[c], frame[c], ac * frame[c]**4, ac * frame[c]**4, 0)
                for c in range(mesh.n_cells)]
        driver.write_snapshot(
            rows, os.path.join(out_dir, f"snapshot_{step:06d}.csv"))
    step = int(round(cfg.t_end / cfg.dt))
    rows = [(step, cfg.t_end, c % mesh.nx, c // mesh.nx, xc[c], yc[c],
             res.T[c], res.T[c], res.Ur[c], res.Ur[c], 0)
            for c in range(mesh.n_cells)]
    driver.write_snapshot(rows,
                          os.path.join(out_dir, "snapshot_final.csv"))
    print(f"final T range = [{res.T.min()}, {res.T.max()}] keV")
    return 0


def _cmd_oracle(args):
    cfg = load_config(args.config)
    out_dir = args.out or os.path.join(cfg.out_dir, "oracle")
    os.makedirs(out_dir, exist_ok=True)
    if args.kind == "homogeneous":
        return _oracle_homogeneous(cfg, out_dir, args.groups)
    return _oracle_diffusion(cfg, out_dir)


def build_parser():
    p = argparse.ArgumentParser(
        prog="ugkp",
        description="Unified gas-kinetic particle solver for "
                    "frequency-dependent thermal radiative transfer")
    sub = p.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a simulation from a config")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--workers", type=int, default=1)
    run_p.add_argument("--scale-mesh", type=float, default=None,
                       dest="scale_mesh",
                       help="multiply mesh cell counts by this factor")
    run_p.add_argument("--t-end", type=float, default=None, dest="t_end",
                       help="override simulated duration (ns)")
    run_p.set_defaults(func=_cmd_run)

    pre_p = sub.add_parser("preset", help="emit a benchmark configuration")
    pre_p.add_argument("--name", required=True,
                       choices=cfgmod.PRESET_NAMES)
    pre_p.add_argument("--print", action="store_true")
    pre_p.add_argument("--out", default=None)
    pre_p.add_argument("--scale-mesh", type=float, default=None,
                       dest="scale_mesh")
    pre_p.add_argument("--t-end", type=float, default=None, dest="t_end")
    pre_p.set_defaults(func=_cmd_preset)

    orc_p = sub.add_parser("oracle", help="run a deterministic reference")
    orc_p.add_argument("kind", choices=("homogeneous", "diffusion"))
    orc_p.add_argument("--config", required=True)
    orc_p.add_argument("--out", default=None)
    orc_p.add_argument("--groups", type=int, default=10000)
    orc_p.set_defaults(func=_cmd_oracle)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
