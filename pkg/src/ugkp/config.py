"""Simulation configuration: TOML loading, validation, and the six
benchmark presets."""

import math
from dataclasses import dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:          # python < 3.11
    import tomli as tomllib

import numpy as np

from .mesh import (BoundarySpec, INFLOW_PLANCK, MaterialRegion, Mesh2D,
                   OUTFLOW, PERIODIC, REFLECTIVE, assign_regions)
from .radiometry import OpacityModel, PhysConstants

PRESET_NAMES = ("marshak-gray", "homogeneous", "marshak-mf",
                "marshak-hetero", "hohlraum-gray", "hohlraum-mf")


class ConfigError(ValueError):
    """Raised with every validation violation listed."""


@dataclass(frozen=True)
class MaterialSpec:
    kind: str
    cv: float
    sigma0: float = 0.0
    exponent: float = 0.0
    sigma_low: float = 0.0
    sigma_high: float = 0.0
    u_split: float = 0.0
    rects: tuple = ()

    def opacity(self):
        k = self.kind
        if k == "gray-constant":
            return OpacityModel.gray_constant(self.sigma0)
        if k == "gray-power-law":
            return OpacityModel.gray_power_law(self.sigma0, self.exponent)
        if k == "frequency-step":
            return OpacityModel.frequency_step(self.sigma_low,
                                               self.sigma_high, self.u_split)
        if k == "frequency-power-law":
            return OpacityModel.frequency_power_law(self.sigma0)
        if k == "stimulated-power-law":
            return OpacityModel.stimulated_power_law(self.sigma0)
        raise ConfigError(f"unknown opacity kind {k!r}")


@dataclass(frozen=True)
class SimulationConfig:
    nx: int
    ny: int
    box: tuple                       # (x0, x1, y0, y1)
    dt: float
    t_end: float
    materials: tuple                 # MaterialSpec, ...
    boundary: dict                   # edge -> (kind, T_b)
    T0: float
    epsilon: float = 1.0
    radiation_T: float = None        # rho0 = a c radiation_T^4 (default T0)
    spectrum_T: float = None         # initial photon spectrum temp
    w_ref: float = None              # default: avg rho0 * cell vol / 100
    init_cap: int = 20_000_000
    spectrum_edges: tuple = None
    limiter_enabled: bool = False
    limiter_threshold: float = 0.1
    picard_tol: float = 1e-8
    picard_max_iter: int = 200
    linear_tol: float = 1e-10
    allow_nonconverged: bool = False
    out_dir: str = "out"
    snapshot_every: int = 0          # steps; 0 = initial + final only
    spectrum_every: int = 0
    seed: int = 12345
    name: str = "custom"

    # -- builders --------------------------------------------------------

    def constants(self):
        return PhysConstants(epsilon=self.epsilon)

    def build_mesh(self):
        return Mesh2D.uniform(self.nx, self.ny, self.box)

    def build_regions(self):
        return [MaterialRegion(m.opacity(), m.cv, m.rects)
                for m in self.materials]

    def build_boundaries(self):
        return BoundarySpec(**{k: tuple(v)
                               for k, v in self.boundary.items()})

    def initial_fields(self, mesh):
        """(rho0, T0, spectrum_T) arrays per cell."""
        n = mesh.n_cells
        t0 = np.full(n, self.T0)
        tr = self.radiation_T if self.radiation_T is not None else self.T0
        ts = self.spectrum_T if self.spectrum_T is not None else self.T0
        consts = self.constants()
        rho0 = np.full(n, consts.a * consts.c * tr**4)
        return rho0, t0, np.full(n, ts)

    def resolved_w_ref(self, mesh):
        if self.w_ref is not None:
            return self.w_ref
        rho0, _, _ = self.initial_fields(mesh)
        vol = mesh.volumes()
        avg_rho = float(np.dot(rho0, vol) / vol.sum())
        return avg_rho * float(vol.mean()) / 100.0

    def resolved_spectrum_edges(self):
        if self.spectrum_edges is not None:
            return np.asarray(self.spectrum_edges, dtype=np.float64)
        scale = max([self.T0, self.spectrum_T or 0.0,
                     self.radiation_T or 0.0]
                    + [tb for kind, tb in self.boundary.values()
                       if kind == INFLOW_PLANCK])
        return np.geomspace(1e-2 * scale, 30.0 * scale, 49)

    def scaled(self, mesh_factor=None, t_end=None):
        """Desk-scale override: multiply cell counts, replace t_end."""
        cfg = self
        if mesh_factor is not None and mesh_factor != 1.0:
            cfg = replace(cfg, nx=max(1, round(cfg.nx * mesh_factor)),
                          ny=max(1, round(cfg.ny * mesh_factor)))
        if t_end is not None:
            cfg = replace(cfg, t_end=t_end)
        return cfg

    def validate(self):
        errors = []
        if self.nx < 1 or self.ny < 1:
            errors.append("mesh.nx/ny must be >= 1")
        x0, x1, y0, y1 = self.box
        if x1 <= x0 or y1 <= y0:
            errors.append("mesh.box must satisfy x1 > x0 and y1 > y0")
        if self.dt <= 0:
            errors.append("time.dt must be positive")
        if self.t_end < 0:
            errors.append("time.t_end must be nonnegative")
        if self.epsilon <= 0:
            errors.append("epsilon must be positive")
        if not self.materials:
            errors.append("at least one [material.N] section is required")
        if self.T0 <= 0:
            errors.append("initial.T0 must be positive")
        for nm, v in (("particles.w_ref", self.w_ref),):
            if v is not None and v <= 0:
                errors.append(f"{nm} must be positive")
        for nm, v in (("solver.picard_tol", self.picard_tol),
                      ("solver.linear_tol", self.linear_tol),
                      ("limiter.threshold", self.limiter_threshold)):
            if v <= 0:
                errors.append(f"{nm} must be positive")
        if self.snapshot_every < 0 or self.spectrum_every < 0:
            errors.append("output strides must be >= 0")
        if self.spectrum_edges is not None:
            e = np.asarray(self.spectrum_edges)
            if len(e) < 2 or np.any(np.diff(e) <= 0):
                errors.append("particles.spectrum_edges must be sorted "
                              "increasing")
        try:
            mesh = self.build_mesh()
            regions = self.build_regions()
            assign_regions(mesh, regions)
            self.build_boundaries()
        except (ValueError, ConfigError) as exc:
            errors.append(str(exc))
        if errors:
            raise ConfigError("invalid configuration:\n  "
                              + "\n  ".join(errors))
        return self


# -- TOML parsing --------------------------------------------------------

_BOUNDARY_KINDS = {INFLOW_PLANCK, REFLECTIVE, PERIODIC, OUTFLOW}

_SECTION_KEYS = {
    "mesh": {"nx", "ny", "box"},
    "time": {"dt", "t_end"},
    "material": {"kind", "cv", "sigma0", "exponent", "sigma_low",
                 "sigma_high", "u_split", "rects"},
    "boundary": {"left", "right", "bottom", "top"},
    "initial": {"T0", "radiation_T", "spectrum_T"},
    "particles": {"w_ref", "init_cap", "spectrum_edges"},
    "limiter": {"enabled", "threshold"},
    "solver": {"picard_tol", "picard_max_iter", "linear_tol",
               "allow_nonconverged"},
    "output": {"directory", "snapshot_every", "spectrum_every"},
}
_TOP_KEYS = set(_SECTION_KEYS) | {"seed", "epsilon", "name"}


def _reject_unknown(table, allowed, where, errors):
    for key in table:
        if key not in allowed:
            errors.append(f"unknown key {where}.{key}" if where
                          else f"unknown key {key}")


def load_config_dict(data):
    """Validated SimulationConfig from a parsed TOML dict."""
    errors = []
    _reject_unknown(data, _TOP_KEYS, "", errors)
    for sec in ("mesh", "time", "boundary", "initial", "particles",
                "limiter", "solver", "output"):
        _reject_unknown(data.get(sec, {}), _SECTION_KEYS[sec], sec, errors)

    mats = []
    mat_tab = data.get("material", {})
    if not isinstance(mat_tab, dict):
        errors.append("material must be a table of numbered sections")
        mat_tab = {}
    for idx in sorted(mat_tab, key=str):
        sub = mat_tab[idx]
        _reject_unknown(sub, _SECTION_KEYS["material"],
                        f"material.{idx}", errors)
        try:
            mats.append(MaterialSpec(
                kind=sub.get("kind", ""), cv=float(sub.get("cv", 0.0)),
                sigma0=float(sub.get("sigma0", 0.0)),
                exponent=float(sub.get("exponent", 0.0)),
                sigma_low=float(sub.get("sigma_low", 0.0)),
                sigma_high=float(sub.get("sigma_high", 0.0)),
                u_split=float(sub.get("u_split", 0.0)),
                rects=tuple(tuple(map(float, r))
                            for r in sub.get("rects", []))))
        except (TypeError, ValueError) as exc:
            errors.append(f"material.{idx}: {exc}")

    boundary = {}
    for edge in ("left", "right", "bottom", "top"):
        spec = data.get("boundary", {}).get(edge, {"kind": REFLECTIVE})
        if isinstance(spec, str):
            spec = {"kind": spec}
        _reject_unknown(spec, {"kind", "T"}, f"boundary.{edge}", errors)
        kind = spec.get("kind", REFLECTIVE)
        if kind not in _BOUNDARY_KINDS:
            errors.append(f"boundary.{edge}.kind {kind!r} not one of "
                          f"{sorted(_BOUNDARY_KINDS)}")
        boundary[edge] = (kind, float(spec.get("T", 0.0)))

    mesh_tab = data.get("mesh", {})
    time_tab = data.get("time", {})
    init_tab = data.get("initial", {})
    part_tab = data.get("particles", {})
    lim_tab = data.get("limiter", {})
    sol_tab = data.get("solver", {})
    out_tab = data.get("output", {})
    if errors:
        raise ConfigError("invalid configuration:\n  "
                          + "\n  ".join(errors))
    cfg = SimulationConfig(
        nx=int(mesh_tab.get("nx", 1)), ny=int(mesh_tab.get("ny", 1)),
        box=tuple(map(float, mesh_tab.get("box", (0.0, 1.0, 0.0, 1.0)))),
        dt=float(time_tab.get("dt", 0.0)),
        t_end=float(time_tab.get("t_end", 0.0)),
        materials=tuple(mats), boundary=boundary,
        T0=float(init_tab.get("T0", 0.0)),
        epsilon=float(data.get("epsilon", 1.0)),
        radiation_T=(None if "radiation_T" not in init_tab
                     else float(init_tab["radiation_T"])),
        spectrum_T=(None if "spectrum_T" not in init_tab
                    else float(init_tab["spectrum_T"])),
        w_ref=(None if "w_ref" not in part_tab
               else float(part_tab["w_ref"])),
        init_cap=int(part_tab.get("init_cap", 20_000_000)),
        spectrum_edges=(None if "spectrum_edges" not in part_tab
                        else tuple(map(float,
                                       part_tab["spectrum_edges"]))),
        limiter_enabled=bool(lim_tab.get("enabled", False)),
        limiter_threshold=float(lim_tab.get("threshold", 0.1)),
        picard_tol=float(sol_tab.get("picard_tol", 1e-8)),
        picard_max_iter=int(sol_tab.get("picard_max_iter", 200)),
        linear_tol=float(sol_tab.get("linear_tol", 1e-10)),
        allow_nonconverged=bool(sol_tab.get("allow_nonconverged", False)),
        out_dir=str(out_tab.get("directory", "out")),
        snapshot_every=int(out_tab.get("snapshot_every", 0)),
        spectrum_every=int(out_tab.get("spectrum_every", 0)),
        seed=int(data.get("seed", 12345)),
        name=str(data.get("name", "custom")))
    return cfg.validate()


def load_config(path):
    """Parse and validate a TOML configuration file."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: TOML parse error: {exc}") from None
    return load_config_dict(data)


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return repr(int(v))
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, str):
        return f'"{v}"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {v!r}")


def to_toml(cfg):
    """Round-trippable TOML text for a SimulationConfig."""
    lines = [f"name = {_fmt(cfg.name)}", f"seed = {_fmt(cfg.seed)}",
             f"epsilon = {_fmt(cfg.epsilon)}", ""]
    lines += ["[mesh]", f"nx = {_fmt(cfg.nx)}", f"ny = {_fmt(cfg.ny)}",
              f"box = {_fmt(cfg.box)}", ""]
    lines += ["[time]", f"dt = {_fmt(cfg.dt)}",
              f"t_end = {_fmt(cfg.t_end)}", ""]
    for k, m in enumerate(cfg.materials):
        lines.append(f"[material.{k}]")
        lines.append(f"kind = {_fmt(m.kind)}")
        lines.append(f"cv = {_fmt(m.cv)}")
        for key in ("sigma0", "exponent", "sigma_low", "sigma_high",
                    "u_split"):
            v = getattr(m, key)
            if v:
                lines.append(f"{key} = {_fmt(v)}")
        if m.rects:
            lines.append(f"rects = {_fmt([list(r) for r in m.rects])}")
        lines.append("")
    lines.append("[boundary]")
    for edge in ("left", "right", "bottom", "top"):
        kind, tb = cfg.boundary[edge]
        if kind == INFLOW_PLANCK:
            lines.append(f'{edge} = {{kind = "{kind}", T = {_fmt(tb)}}}')
        else:
            lines.append(f'{edge} = {{kind = "{kind}"}}')
    lines.append("")
    lines.append("[initial]")
    lines.append(f"T0 = {_fmt(cfg.T0)}")
    if cfg.radiation_T is not None:
        lines.append(f"radiation_T = {_fmt(cfg.radiation_T)}")
    if cfg.spectrum_T is not None:
        lines.append(f"spectrum_T = {_fmt(cfg.spectrum_T)}")
    lines.append("")
    lines.append("[particles]")
    if cfg.w_ref is not None:
        lines.append(f"w_ref = {_fmt(cfg.w_ref)}")
    lines.append(f"init_cap = {_fmt(cfg.init_cap)}")
    if cfg.spectrum_edges is not None:
        lines.append(f"spectrum_edges = {_fmt(cfg.spectrum_edges)}")
    lines.append("")
    lines += ["[limiter]", f"enabled = {_fmt(cfg.limiter_enabled)}",
              f"threshold = {_fmt(cfg.limiter_threshold)}", ""]
    lines += ["[solver]", f"picard_tol = {_fmt(cfg.picard_tol)}",
              f"picard_max_iter = {_fmt(cfg.picard_max_iter)}",
              f"linear_tol = {_fmt(cfg.linear_tol)}",
              f"allow_nonconverged = {_fmt(cfg.allow_nonconverged)}", ""]
    lines += ["[output]", f"directory = {_fmt(cfg.out_dir)}",
              f"snapshot_every = {_fmt(cfg.snapshot_every)}",
              f"spectrum_every = {_fmt(cfg.spectrum_every)}", ""]
    return "\n".join(lines)


# -- presets --------------------------------------------------------------

def _particles_per_cell_wref(box, nx, ny, T_drive, n_per_cell,
                             consts=PhysConstants()):
    vol = (box[1] - box[0]) * (box[3] - box[2]) / (nx * ny)
    return consts.a * consts.c * T_drive**4 * vol / n_per_cell


def preset(name, scale_mesh=None, t_end=None):
    """Configuration of one of the six benchmark problems.

    Every preset accepts desk-scale overrides: scale_mesh multiplies the
    cell counts, t_end replaces the simulated duration.
    """
    if name == "marshak-gray":
        box = (0.0, 0.5, 0.0, 1.0)
        cfg = SimulationConfig(
            nx=200, ny=1, box=box, dt=1.6e-3, t_end=10.0,
            materials=(MaterialSpec(kind="gray-power-law", cv=0.3,
                                    sigma0=300.0, exponent=3.0),),
            boundary={"left": (INFLOW_PLANCK, 1.0),
                      "right": (OUTFLOW, 0.0),
                      "bottom": (REFLECTIVE, 0.0),
                      "top": (REFLECTIVE, 0.0)},
            T0=1e-3,
            w_ref=_particles_per_cell_wref(box, 200, 1, 1.0, 100),
            snapshot_every=125, name=name)
    elif name == "homogeneous":
        box = (0.0, 0.01, 0.0, 1.0)
        vol = 0.01
        consts = PhysConstants()
        cfg = SimulationConfig(
            nx=1, ny=1, box=box, dt=2.6e-4, t_end=1.0,
            materials=(MaterialSpec(kind="frequency-step", cv=0.3,
                                    sigma_low=1e-8, sigma_high=1000.0,
                                    u_split=1.0),),
            boundary={"left": (PERIODIC, 0.0), "right": (PERIODIC, 0.0),
                      "bottom": (PERIODIC, 0.0), "top": (PERIODIC, 0.0)},
            T0=1.0, radiation_T=1.0, spectrum_T=0.1,
            w_ref=consts.a * consts.c * 1.0**4 * vol / 200_000.0,
            spectrum_edges=tuple(np.geomspace(0.02, 15.0, 65)),
            spectrum_every=1000, snapshot_every=1000, name=name)
    elif name == "marshak-mf":
        box = (0.0, 5.0, 0.0, 1.0)
        cfg = SimulationConfig(
            nx=1000, ny=1, box=box, dt=1.3e-4, t_end=1.0,
            materials=(MaterialSpec(kind="frequency-power-law", cv=0.1,
                                    sigma0=1000.0),),
            boundary={"left": (INFLOW_PLANCK, 1.0),
                      "right": (REFLECTIVE, 0.0),
                      "bottom": (REFLECTIVE, 0.0),
                      "top": (REFLECTIVE, 0.0)},
            T0=1e-3,
            w_ref=_particles_per_cell_wref(box, 1000, 1, 1.0, 50),
            snapshot_every=1000, name=name)
    elif name == "marshak-hetero":
        box = (0.0, 3.0, 0.0, 1.0)
        cfg = SimulationConfig(
            nx=600, ny=1, box=box, dt=1.3e-4, t_end=1.0,
            materials=(MaterialSpec(kind="frequency-power-law", cv=0.1,
                                    sigma0=10.0,
                                    rects=((0.0, 2.0, 0.0, 1.0),)),
                       MaterialSpec(kind="frequency-power-law", cv=0.1,
                                    sigma0=1000.0,
                                    rects=((2.0, 3.0, 0.0, 1.0),))),
            boundary={"left": (INFLOW_PLANCK, 1.0),
                      "right": (REFLECTIVE, 0.0),
                      "bottom": (REFLECTIVE, 0.0),
                      "top": (REFLECTIVE, 0.0)},
            T0=1e-3,
            w_ref=_particles_per_cell_wref(box, 600, 1, 1.0, 50),
            snapshot_every=1000, name=name)
    elif name == "hohlraum-gray":
        box = (0.0, 1.0, 0.0, 1.0)
        cfg = SimulationConfig(
            nx=100, ny=100, box=box, dt=2.7e-4, t_end=1.0,
            materials=(MaterialSpec(kind="gray-constant", cv=1e-4,
                                    sigma0=1e-8),
                       MaterialSpec(kind="gray-power-law", cv=0.3,
                                    sigma0=100.0, exponent=3.0,
                                    rects=((0.0, 0.05, 0.25, 0.75),
                                           (0.25, 0.75, 0.25, 0.75),
                                           (0.0, 1.0, 0.0, 0.05),
                                           (0.0, 1.0, 0.95, 1.0),
                                           (0.95, 1.0, 0.0, 1.0)))),
            boundary={"left": (INFLOW_PLANCK, 1.0),
                      "right": (REFLECTIVE, 0.0),
                      "bottom": (INFLOW_PLANCK, 1e-3),
                      "top": (INFLOW_PLANCK, 1e-3)},
            T0=1e-3,
            w_ref=_particles_per_cell_wref(box, 100, 100, 1.0, 15),
            snapshot_every=500, name=name)
    elif name == "hohlraum-mf":
        box = (0.0, 0.65, 0.0, 1.4)
        cfg = SimulationConfig(
            nx=52, ny=112, box=box, dt=1.7e-4, t_end=10.0,
            materials=(MaterialSpec(kind="gray-constant", cv=1e-4,
                                    sigma0=1e-8),
                       MaterialSpec(kind="stimulated-power-law", cv=0.3,
                                    sigma0=1000.0,
                                    rects=((0.0, 0.45, 0.1, 0.15),
                                           (0.0, 0.45, 0.55, 0.95),
                                           (0.6, 0.65, 0.1, 1.4),
                                           (0.0, 0.65, 1.35, 1.4)))),
            boundary={"left": (REFLECTIVE, 0.0),
                      "right": (INFLOW_PLANCK, 1e-3),
                      "bottom": (INFLOW_PLANCK, 0.3),
                      "top": (INFLOW_PLANCK, 1e-3)},
            T0=1e-3, limiter_enabled=True,
            w_ref=_particles_per_cell_wref(box, 52, 112, 0.3, 30),
            snapshot_every=500, name=name)
    else:
        raise ConfigError(f"unknown preset {name!r}; available: "
                          + ", ".join(PRESET_NAMES))
    return cfg.scaled(scale_mesh, t_end).validate()
