"""Tracking-throughput benchmark comparing the numba and numpy lanes.

Run ``python -m ugkp.benchmark``; it times the tracking kernel in the
current lane, then re-runs itself in a subprocess with UGKP_NUMBA flipped
and prints both rates.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workload(n_particles, n_steps, sigma):
    from . import mesh as M
    from . import transport as tr
    from ._accel import NUMBA_ENABLED
    from .radiometry import OpacityModel, PhysConstants

    consts = PhysConstants()
    m = M.Mesh2D.uniform(32, 32, (0.0, 1.0, 0.0, 1.0))
    regions = [M.MaterialRegion(OpacityModel.gray_constant(sigma), 0.3)]
    rid = M.assign_regions(m, regions)
    bc = M.BoundarySpec(left=("periodic", 0.0), right=("periodic", 0.0),
                        bottom=("periodic", 0.0), top=("periodic", 0.0))
    rho0 = np.full(m.n_cells, consts.a * consts.c)
    w_ref = float(rho0[0]) * (1.0 / m.n_cells) / (n_particles / m.n_cells)
    parts = tr.sample_initial_particles(m, rho0, np.ones(m.n_cells), w_ref,
                                        rng_seed=11)
    T_n = np.ones(m.n_cells)
    dt = 0.3 / consts.c / 32.0 * 8.0     # ~8 cells of flight per step

    # one warmup call so jit compilation is not timed
    tr.track_all(parts.copy(), len(parts), m, rid, regions, T_n, bc, dt,
                 seed=1)
    t0 = time.perf_counter()
    events = 0
    for step in range(n_steps):
        tallies, parts = tr.track_all(parts, len(parts), m, rid, regions,
                                      T_n, bc, dt, seed=1, step=step)
        events += tallies.n_events
    elapsed = time.perf_counter() - t0
    return {"lane": "numba" if NUMBA_ENABLED else "numpy",
            "particles": len(parts), "steps": n_steps, "events": events,
            "seconds": elapsed, "events_per_s": events / elapsed}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--particles", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=5)
    ap.add_argument("--sigma", type=float, default=1.0)
    ap.add_argument("--single-lane", action="store_true",
                    help="benchmark only the current lane (used by the "
                         "subprocess re-run)")
    args = ap.parse_args(argv)

    res = _workload(args.particles, args.steps, args.sigma)
    print(json.dumps(res))
    if args.single_lane:
        return 0

    env = dict(os.environ)
    other = "0" if res["lane"] == "numba" else "1"
    env["UGKP_NUMBA"] = other
    scale = 1 if other == "1" else 50   # the numpy lane is slow; shrink it
    cmd = [sys.executable, "-m", "ugkp.benchmark", "--single-lane",
           "--particles", str(max(1000, args.particles // scale)),
           "--steps", str(args.steps), "--sigma", str(args.sigma)]
    out = subprocess.run(cmd, env=env, capture_output=True, text=True,
                         check=True)
    res2 = json.loads(out.stdout.strip().splitlines()[-1])

    print()
    print(f"{'lane':<8} {'events':>12} {'seconds':>10} {'events/s':>14}")
    for r in (res, res2):
        print(f"{r['lane']:<8} {r['events']:>12} {r['seconds']:>10.3f} "
              f"{r['events_per_s']:>14.0f}")
    fast = max(res, res2, key=lambda r: r["events_per_s"])
    slow = min(res, res2, key=lambda r: r["events_per_s"])
    print(f"\n{fast['lane']} lane is "
          f"{fast['events_per_s'] / slow['events_per_s']:.1f}x faster")
    return 0


if __name__ == "__main__":
    sys.exit(main())
