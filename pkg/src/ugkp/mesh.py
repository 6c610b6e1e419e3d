"""2D Cartesian mesh, cell fields, material regions, boundary specs."""

from dataclasses import dataclass, field

import numpy as np

from .radiometry import OpacityModel, PhysConstants

T_FLOOR = 1e-6  # keV, applied when inverting U_r -> T

# boundary kinds
INFLOW_PLANCK = "inflow-planck"
REFLECTIVE = "reflective"
PERIODIC = "periodic"
OUTFLOW = "outflow"

EDGE_NAMES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Mesh2D:
    """Cell-edge coordinates; supports non-uniform spacing."""

    x_edges: np.ndarray
    y_edges: np.ndarray

    def __post_init__(self):
        for edges, name in ((self.x_edges, "x_edges"),
                            (self.y_edges, "y_edges")):
            e = np.asarray(edges, dtype=np.float64)
            if e.ndim != 1 or len(e) < 2 or np.any(np.diff(e) <= 0):
                raise ValueError(f"{name} must be strictly increasing with "
                                 "at least two entries")
        object.__setattr__(self, "x_edges",
                           np.ascontiguousarray(self.x_edges, np.float64))
        object.__setattr__(self, "y_edges",
                           np.ascontiguousarray(self.y_edges, np.float64))

    @classmethod
    def uniform(cls, nx, ny, box):
        x0, x1, y0, y1 = box
        return cls(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))

    @property
    def nx(self):
        return len(self.x_edges) - 1

    @property
    def ny(self):
        return len(self.y_edges) - 1

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def dx(self):
        return np.diff(self.x_edges)

    @property
    def dy(self):
        return np.diff(self.y_edges)

    def volumes(self):
        """Flattened (ny*nx,) cell areas, index = j*nx + i."""
        return np.outer(self.dy, self.dx).ravel()

    def centers(self):
        """(xc, yc) flattened per cell."""
        xc = 0.5 * (self.x_edges[:-1] + self.x_edges[1:])
        yc = 0.5 * (self.y_edges[:-1] + self.y_edges[1:])
        return (np.tile(xc, self.ny), np.repeat(yc, self.nx))

    def locate_cell(self, point):
        """(i, j) of the half-open cell box containing the point.

        Points on interior edges belong to the right/upper cell; the
        top/right domain boundary maps to the last cell.
        """
        x, y = point
        if not (self.x_edges[0] <= x <= self.x_edges[-1]
                and self.y_edges[0] <= y <= self.y_edges[-1]):
            raise ValueError(f"point {point} outside the domain")
        i = min(int(np.searchsorted(self.x_edges, x, side="right")) - 1,
                self.nx - 1)
        j = min(int(np.searchsorted(self.y_edges, y, side="right")) - 1,
                self.ny - 1)
        return max(i, 0), max(j, 0)


def radiation_temperature(rho, consts=PhysConstants()):
    """T_r = (rho / (a c))^(1/4)."""
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("rho must be nonnegative")
    out = (rho / (consts.a * consts.c)) ** 0.25
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MaterialRegion:
    """Opacity + heat capacity over a set of axis-aligned rectangles.

    An empty rectangle list marks the background region that claims every
    cell not covered by any other region.
    """

    opacity: OpacityModel
    cv: float
    rects: tuple = ()   # ((x0, x1, y0, y1), ...)

    def __post_init__(self):
        if self.cv <= 0:
            raise ValueError("Cv must be positive")
        for r in self.rects:
            x0, x1, y0, y1 = r
            if x1 <= x0 or y1 <= y0:
                raise ValueError(f"degenerate region rectangle {r}")

    def contains(self, x, y):
        for x0, x1, y0, y1 in self.rects:
            if x0 <= x <= x1 and y0 <= y <= y1:
                return True
        return False


def assign_regions(mesh, regions):
    """Flattened per-cell region index by cell-center membership.

    Every cell must land in exactly one explicit region, or in the single
    background region when no rectangle claims it.
    """
    xc, yc = mesh.centers()
    region_id = np.full(mesh.n_cells, -1, dtype=np.int64)
    background = [k for k, r in enumerate(regions) if not r.rects]
    if len(background) > 1:
        raise ValueError("at most one background region (empty rects)")
    for cell in range(mesh.n_cells):
        hits = [k for k, r in enumerate(regions)
                if r.rects and r.contains(xc[cell], yc[cell])]
        if len(hits) > 1:
            raise ValueError(
                f"cell center ({xc[cell]}, {yc[cell]}) claimed by regions "
                f"{hits}; rectangles of different regions must not overlap")
        if hits:
            region_id[cell] = hits[0]
        elif background:
            region_id[cell] = background[0]
        else:
            raise ValueError(
                f"cell center ({xc[cell]}, {yc[cell]}) not covered by any "
                "region and no background region is defined")
    return region_id


@dataclass(frozen=True)
class BoundarySpec:
    """Per-edge condition: (kind, T_b) with T_b used by inflow-planck."""

    left: tuple = (REFLECTIVE, 0.0)
    right: tuple = (REFLECTIVE, 0.0)
    bottom: tuple = (REFLECTIVE, 0.0)
    top: tuple = (REFLECTIVE, 0.0)

    def __post_init__(self):
        for name in EDGE_NAMES:
            kind, tb = getattr(self, name)
            if kind not in (INFLOW_PLANCK, REFLECTIVE, PERIODIC, OUTFLOW):
                raise ValueError(f"unknown boundary kind {kind!r} on {name}")
            if kind == INFLOW_PLANCK and tb <= 0:
                raise ValueError(f"inflow-planck on {name} needs T_b > 0")
        for a, b in (("left", "right"), ("bottom", "top")):
            pa = getattr(self, a)[0] == PERIODIC
            pb = getattr(self, b)[0] == PERIODIC
            if pa != pb:
                raise ValueError(f"periodic must pair {a}/{b}")

    def edge(self, name):
        return getattr(self, name)

    def tracker_codes(self):
        """Per-edge behavior for the tracking kernel (inflow is open)."""
        from . import kernels
        codes = []
        for name in EDGE_NAMES:
            kind = getattr(self, name)[0]
            if kind == REFLECTIVE:
                codes.append(kernels.BC_REFLECT)
            elif kind == PERIODIC:
                codes.append(kernels.BC_PERIODIC)
            else:
                codes.append(kernels.BC_OPEN)
        return np.array(codes, dtype=np.int64)


@dataclass
class MacroFields:
    """Per-cell macroscopic state (flattened, index = j*nx + i).

    rho is the angle/frequency-integrated intensity; U_r = a c T^4 is kept
    consistent with T whenever the fields are read outside the macro
    solver's inner loop.
    """

    rho: np.ndarray
    T: np.ndarray
    Ur: np.ndarray = field(default=None)
    consts: PhysConstants = field(default_factory=PhysConstants)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64).copy()
        self.T = np.maximum(np.asarray(self.T, dtype=np.float64), T_FLOOR)
        if self.Ur is None:
            self.Ur = self.consts.a * self.consts.c * self.T**4
        else:
            self.Ur = np.asarray(self.Ur, dtype=np.float64).copy()

    @classmethod
    def equilibrium(cls, T, consts=PhysConstants()):
        """rho = U_r = a c T^4 everywhere."""
        T = np.maximum(np.asarray(T, dtype=np.float64), T_FLOOR)
        ur = consts.a * consts.c * T**4
        return cls(rho=ur.copy(), T=T.copy(), Ur=ur.copy(), consts=consts)

    def set_from_Ur(self, Ur):
        """Update U_r and re-derive T with the floor applied."""
        self.Ur = np.asarray(Ur, dtype=np.float64).copy()
        self.T = np.maximum(
            (np.maximum(self.Ur, 0.0) / (self.consts.a * self.consts.c))
            ** 0.25, T_FLOOR)

    def copy(self):
        return MacroFields(self.rho.copy(), self.T.copy(), self.Ur.copy(),
                           self.consts)
