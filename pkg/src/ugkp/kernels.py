"""Hot numerical kernels shared by the numba and pure-numpy lanes.

Everything here is written in numba-compatible scalar style and decorated
via the :mod:`ugkp._accel` shim.  Randomness is counter-based: every draw
stream is keyed by (seed, purpose, step, index), so results are
deterministic and independent of scheduling.

Particle rows are float64 with columns (weight, x, y, omega_x, omega_y,
omega_z, u, t_local).
"""

import math

import numpy as np

from ._accel import NUMBA_ENABLED, njit, prange

# particle array columns
W, X, Y, OX, OY, OZ, U, TLOC = 0, 1, 2, 3, 4, 5, 6, 7
NCOL = 8

# tracking outcomes
CENSUS, ABSORBED, OUTFLOW, TRACK_ERROR = 0, 1, 2, 3

# boundary behavior codes seen by the tracker (inflow edges are open)
BC_REFLECT, BC_PERIODIC, BC_OPEN = 0, 1, 2

# RNG stream purposes
P_INIT, P_TRACK, P_RESAMPLE, P_BOUNDARY, P_PLANCK, P_EMISSION = (
    np.uint64(0), np.uint64(1), np.uint64(2), np.uint64(3), np.uint64(9),
    np.uint64(10))

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_KA = np.uint64(0xC2B2AE3D27D4EB4F)
_KB = np.uint64(0x165667B19E3779F9)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53

# cumulative of n^-4 / zeta(4); tail beyond the table is below 2^-52
_Z4N = 100000
_z4 = 1.0 / np.arange(1, _Z4N + 1, dtype=np.float64) ** 4
_Z4CUM = np.cumsum(_z4)
_Z4CUM /= _Z4CUM[-1]
del _z4


if NUMBA_ENABLED:
    @njit(cache=True)
    def _mix(z):
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        return z ^ (z >> _S31)

    @njit(cache=True)
    def stream_state(seed, purpose, step, idx):
        """Initial splitmix64 state for one independent draw stream."""
        h = seed
        h = _mix(h ^ (_GOLD * (purpose + _ONE)))
        h = _mix(h ^ (_KA * (np.uint64(step) + _ONE)))
        h = _mix(h ^ (_KB * (np.uint64(idx) + _ONE)))
        return h

    @njit(cache=True)
    def u01(state):
        """Advance the stream; returns (state, uniform in (0, 1])."""
        state = state + _GOLD
        z = _mix(state)
        return state, float((z >> _S11) + _ONE) * _INV53
else:
    # Pure-Python twins of the splitmix64 primitives.  numpy uint64 scalar
    # arithmetic warns on wraparound, so the fallback lane runs the same
    # modular arithmetic on Python ints; the sequences are identical.
    _M64 = (1 << 64) - 1

    def _mix(z):
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
        return z ^ (z >> 31)

    def stream_state(seed, purpose, step, idx):
        """Initial splitmix64 state for one independent draw stream."""
        h = int(seed)
        h = _mix(h ^ ((int(_GOLD) * (int(purpose) + 1)) & _M64))
        h = _mix(h ^ ((int(_KA) * (int(step) + 1)) & _M64))
        h = _mix(h ^ ((int(_KB) * (int(idx) + 1)) & _M64))
        return h

    def u01(state):
        """Advance the stream; returns (state, uniform in (0, 1])."""
        state = (int(state) + int(_GOLD)) & _M64
        z = _mix(state)
        return state, float((z >> 11) + 1) * _INV53


@njit(cache=True)
def sigma_eval(kind, params, u, T):
    """Pointwise opacity for the packed model representation."""
    if kind == 0:
        return params[0]
    if kind == 1:
        return params[0] / T ** params[1]
    if kind == 2:
        if u < params[2]:
            return params[0]
        return params[1]
    if kind == 3:
        return params[0] / (u * u * u * math.sqrt(T))
    return params[0] * (-math.expm1(-u / T)) / (u * u * u)


@njit(cache=True)
def _draw_planck(state, T):
    # Exact Planck sampling: pick the series index n with p ~ n^-4, then
    # x = -ln(xi1 xi2 xi3 xi4)/n is Gamma(4, n)-distributed.
    state, xi = u01(state)
    n = np.searchsorted(_Z4CUM, xi) + 1
    state, a = u01(state)
    state, b = u01(state)
    state, c = u01(state)
    state, d = u01(state)
    x = -math.log(a * b * c * d) / n
    return state, x * T


@njit(cache=True)
def _draw_emission(state, T, kind, params, cdt_over_eps2):
    # Rejection against the Planck envelope with acceptance
    # 1 - e^{-c sigma dt / eps^2}; caller guarantees the expected
    # acceptance is not degenerate.
    u = 0.0
    for _ in range(10_000_000):
        state, u = _draw_planck(state, T)
        p = -math.expm1(-sigma_eval(kind, params, u, T) * cdt_over_eps2)
        state, xi = u01(state)
        if xi <= p:
            return state, u
    return state, u


@njit(cache=True)
def sample_planck_batch(T, n, seed):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        st = stream_state(seed, P_PLANCK, 0, i)
        st, u = _draw_planck(st, T)
        out[i] = u
    return out


@njit(cache=True)
def sample_emission_batch(T, n, seed, kind, params, cdt_over_eps2):
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        st = stream_state(seed, P_EMISSION, 0, i)
        st, u = _draw_emission(st, T, kind, params, cdt_over_eps2)
        out[i] = u
    return out


@njit(cache=True)
def _isotropic(state):
    state, xi1 = u01(state)
    oz = 1.0 - 2.0 * xi1
    r = math.sqrt(max(0.0, 1.0 - oz * oz))
    state, xi2 = u01(state)
    phi = 2.0 * math.pi * xi2
    return state, r * math.cos(phi), r * math.sin(phi), oz


@njit(cache=True)
def fill_cell_sampled(parts, cells, weights, T_spec, x_edges, y_edges, nx,
                      seed, purpose, step, emission, region_of_row, kinds,
                      params, cdt_over_eps2, tilted, e0, s1, s2):
    """Fill particle rows born inside cells (initial or re-sampled).

    Positions are uniform in the cell, or rejection-tilted against the
    clamped linear profile e0 + s1 (x-xc) + s2 (y-yc) when ``tilted``.
    Frequencies follow the Planck law at T_spec, or the emission law when
    ``emission``.
    """
    n = parts.shape[0]
    for r in range(n):
        cell = cells[r]
        i = cell % nx
        j = cell // nx
        xl, xr = x_edges[i], x_edges[i + 1]
        yb, yt = y_edges[j], y_edges[j + 1]
        st = stream_state(seed, purpose, step, r)
        if tilted:
            xc = 0.5 * (xl + xr)
            yc = 0.5 * (yb + yt)
            top = max(1e-300,
                      e0[r] + abs(s1[r]) * 0.5 * (xr - xl)
                      + abs(s2[r]) * 0.5 * (yt - yb))
            px, py = xc, yc
            for _ in range(100000):
                st, xi1 = u01(st)
                st, xi2 = u01(st)
                px = xl + (xr - xl) * xi1
                py = yb + (yt - yb) * xi2
                val = max(0.0, e0[r] + s1[r] * (px - xc) + s2[r] * (py - yc))
                st, xi3 = u01(st)
                if xi3 * top <= val:
                    break
            parts[r, X] = px
            parts[r, Y] = py
        else:
            st, xi1 = u01(st)
            st, xi2 = u01(st)
            parts[r, X] = xl + (xr - xl) * xi1
            parts[r, Y] = yb + (yt - yb) * xi2
        st, ox, oy, oz = _isotropic(st)
        parts[r, OX] = ox
        parts[r, OY] = oy
        parts[r, OZ] = oz
        if emission:
            kreg = region_of_row[r]
            st, u = _draw_emission(st, T_spec[r], kinds[kreg], params[kreg],
                                   cdt_over_eps2)
        else:
            st, u = _draw_planck(st, T_spec[r])
        parts[r, U] = u
        parts[r, W] = weights[r]
        parts[r, TLOC] = 0.0
    return parts


@njit(cache=True)
def fill_boundary_sampled(parts, lo, hi, fixed_coord, axis, inward, T_b, dt,
                          seed, step):
    """Fill boundary-source rows on one edge.

    axis 0: segment along y at x = fixed_coord; axis 1: along x at
    y = fixed_coord.  inward is +-1, the sign of the inward normal
    component.  Directions follow the cosine law, emission times are
    uniform within the step.
    """
    n = parts.shape[0]
    for r in range(n):
        st = stream_state(seed, P_BOUNDARY, step, r)
        st, xi1 = u01(st)
        pos = lo[r] + (hi[r] - lo[r]) * xi1
        st, xi2 = u01(st)
        mu = math.sqrt(xi2)
        t = math.sqrt(max(0.0, 1.0 - mu * mu))
        st, xi3 = u01(st)
        phi = 2.0 * math.pi * xi3
        if axis == 0:
            parts[r, X] = fixed_coord
            parts[r, Y] = pos
            parts[r, OX] = inward * mu
            parts[r, OY] = t * math.cos(phi)
        else:
            parts[r, X] = pos
            parts[r, Y] = fixed_coord
            parts[r, OY] = inward * mu
            parts[r, OX] = t * math.cos(phi)
        parts[r, OZ] = t * math.sin(phi)
        st, u = _draw_planck(st, T_b)
        parts[r, U] = u
        st, xi4 = u01(st)
        parts[r, TLOC] = dt * xi4
    return parts


@njit(cache=True)
def _locate(edges, v, nmax):
    idx = np.searchsorted(edges, v, side="right") - 1
    if idx < 0:
        idx = 0
    if idx > nmax - 1:
        idx = nmax - 1
    return idx


@njit(cache=True)
def _collision_distance(state, sigma, eps):
    state, xi = u01(state)
    if sigma < 1e-30:
        return state, 1e30
    d = eps / sigma * (-math.log(xi))
    return state, min(d, 1e30)


@njit(cache=True, parallel=True)
def track_kernel(parts, x_edges, y_edges, nx, ny, region_id, kinds, params,
                 T_n, bc, dt, c, eps, has_limiter, lim_flag_x, lim_tau_x,
                 lim_flag_y, lim_tau_y, seed, step, status, fcell, events):
    """Advance every particle to first collision, outflow, or census.

    Reads only beginning-of-step temperatures T_n.  Each particle owns an
    independent RNG stream and writes only its own output slots, so the
    result is independent of the parallel schedule.
    """
    n = parts.shape[0]
    for p in prange(n):
        st = stream_state(seed, P_TRACK, step, p)
        x = parts[p, X]
        y = parts[p, Y]
        ox = parts[p, OX]
        oy = parts[p, OY]
        u = parts[p, U]
        t = parts[p, TLOC]
        i = _locate(x_edges, x, nx)
        j = _locate(y_edges, y, ny)
        cell = j * nx + i
        reg = region_id[cell]
        sig = sigma_eval(kinds[reg], params[reg], u, T_n[cell])
        st, d_col = _collision_distance(st, sig, eps)
        out = TRACK_ERROR
        nev = 0
        for _ in range(1_000_000):
            nev += 1
            d_cen = (c / eps) * (dt - t)
            if ox > 0.0:
                d_bx = (x_edges[i + 1] - x) / ox
            elif ox < 0.0:
                d_bx = (x_edges[i] - x) / ox
            else:
                d_bx = 1e300
            if oy > 0.0:
                d_by = (y_edges[j + 1] - y) / oy
            elif oy < 0.0:
                d_by = (y_edges[j] - y) / oy
            else:
                d_by = 1e300
            d_b = min(d_bx, d_by)
            if d_col <= d_b and d_col <= d_cen:
                # absorbed inside the current cell
                parts[p, X] = x + d_col * ox
                parts[p, Y] = y + d_col * oy
                fcell[p] = cell
                out = ABSORBED
                break
            if d_cen <= d_b:
                # survives to the census
                parts[p, X] = x + d_cen * ox
                parts[p, Y] = y + d_cen * oy
                parts[p, TLOC] = dt
                fcell[p] = cell
                out = CENSUS
                break
            # face crossing
            s = d_b
            t += s * eps / c
            d_col -= s
            crossed = False
            flagged = False
            tau = 0.0
            if d_bx <= d_by:
                y += s * oy
                if ox > 0.0:
                    face = i + 1
                    if face == nx:
                        code = bc[1]
                        if code == BC_REFLECT:
                            x = x_edges[nx]
                            ox = -ox
                        elif code == BC_PERIODIC:
                            x = x_edges[0]
                            i = 0
                            crossed = True
                        else:
                            out = OUTFLOW
                            fcell[p] = -1
                            break
                    else:
                        x = x_edges[face]
                        i += 1
                        crossed = True
                        if has_limiter and lim_flag_x[j * (nx + 1) + face]:
                            flagged = True
                            tau = lim_tau_x[j * (nx + 1) + face]
                else:
                    face = i
                    if face == 0:
                        code = bc[0]
                        if code == BC_REFLECT:
                            x = x_edges[0]
                            ox = -ox
                        elif code == BC_PERIODIC:
                            x = x_edges[nx]
                            i = nx - 1
                            crossed = True
                        else:
                            out = OUTFLOW
                            fcell[p] = -1
                            break
                    else:
                        x = x_edges[face]
                        i -= 1
                        crossed = True
                        if has_limiter and lim_flag_x[j * (nx + 1) + face]:
                            flagged = True
                            tau = lim_tau_x[j * (nx + 1) + face]
            else:
                x += s * ox
                if oy > 0.0:
                    face = j + 1
                    if face == ny:
                        code = bc[3]
                        if code == BC_REFLECT:
                            y = y_edges[ny]
                            oy = -oy
                        elif code == BC_PERIODIC:
                            y = y_edges[0]
                            j = 0
                            crossed = True
                        else:
                            out = OUTFLOW
                            fcell[p] = -1
                            break
                    else:
                        y = y_edges[face]
                        j += 1
                        crossed = True
                        if has_limiter and lim_flag_y[face * nx + i]:
                            flagged = True
                            tau = lim_tau_y[face * nx + i]
                else:
                    face = j
                    if face == 0:
                        code = bc[2]
                        if code == BC_REFLECT:
                            y = y_edges[0]
                            oy = -oy
                        elif code == BC_PERIODIC:
                            y = y_edges[ny]
                            j = ny - 1
                            crossed = True
                        else:
                            out = OUTFLOW
                            fcell[p] = -1
                            break
                    else:
                        y = y_edges[face]
                        j -= 1
                        crossed = True
                        if has_limiter and lim_flag_y[face * nx + i]:
                            flagged = True
                            tau = lim_tau_y[face * nx + i]
            if crossed:
                # memoryless: redraw the collision distance in the new cell
                cell = j * nx + i
                reg = region_id[cell]
                sig = sigma_eval(kinds[reg], params[reg], u, T_n[cell])
                if flagged:
                    st, xi = u01(st)
                    d_col = min((c / eps) * (-math.log(xi)) * tau, 1e30)
                else:
                    st, d_col = _collision_distance(st, sig, eps)
        parts[p, OX] = ox
        parts[p, OY] = oy
        status[p] = out
        events[p] = nev
    return parts


@njit(cache=True)
def absorption_tally_kernel(offsets, w, u, region_id, kinds, params, T, vol,
                            out):
    """Per-cell A = sum(w sigma(u, T)) / V over the census list."""
    ncell = offsets.shape[0] - 1
    for cell in range(ncell):
        reg = region_id[cell]
        k = kinds[reg]
        acc = 0.0
        for r in range(offsets[cell], offsets[cell + 1]):
            acc += w[r] * sigma_eval(k, params[reg], u[r], T[cell])
        out[cell] = acc / vol[cell]
    return out
