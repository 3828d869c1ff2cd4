"""Cahn-Hilliard dynamics with an Allen-Cahn dynamic boundary condition.

Finite-difference solver for the Yosida-regularized system on a periodic
slab, with the monitors and parameter studies used to examine the limits of
vanishing surface diffusion and vanishing regularization.

Modules
-------
graphs       maximal monotone graphs, resolvents, Yosida and Moreau calculus
geometry     slab grid, conservative operators, discrete norms, snapshots
stepper      backward-Euler Newton stepper and run loop
diagnostics  mass, energy, dissipation and estimate monitors, CSV output
experiments  kappa/eps sweeps, continuous dependence, manufactured solution
config, cli  TOML configuration and the ``chdbc`` command
"""

from .errors import (
    CHDBCError,
    ConvergenceError,
    DomainError,
    MeanError,
    NewtonDivergence,
    ParseError,
    SolverError,
    ValidationError,
)
from .geometry import SlabGrid
from .graphs import MonotoneGraph, Perturbation, PotentialPair, catalog
from .stepper import RunConfig, State, run, step

__version__ = "0.1.0"

__all__ = [
    "CHDBCError",
    "ConvergenceError",
    "DomainError",
    "MeanError",
    "NewtonDivergence",
    "ParseError",
    "SolverError",
    "ValidationError",
    "SlabGrid",
    "MonotoneGraph",
    "Perturbation",
    "PotentialPair",
    "catalog",
    "RunConfig",
    "State",
    "run",
    "step",
]
