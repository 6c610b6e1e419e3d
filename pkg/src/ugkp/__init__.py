"""Unified gas-kinetic particle solver for frequency-dependent thermal
radiative transfer.

Monte Carlo particles are tracked only to their first collision; the
absorbed/emitted energy is closed through an implicit finite-volume solve
of the coupled radiation/material moment equations and re-sampled as new
particles each step.  The scheme limits to a five-point discretization of
the Rosseland diffusion equation in optically thick regions and to a plain
Monte Carlo solver in transparent ones.
"""

__version__ = "0.1.0"

from .radiometry import OpacityModel, PhysConstants  # noqa: F401
from .config import SimulationConfig, load_config, preset  # noqa: F401
from .driver import Simulation, run_simulation  # noqa: F401
