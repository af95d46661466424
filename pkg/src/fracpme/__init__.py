"""Numerical laboratory for the fractional porous medium equation

    u_t + (-Delta)^{sigma/2} (|u|^{m-1} u) = 0

built on implicit Euler steps through the nonlinear resolvent.
"""

from .grid import Boundary, Field, Grid, Spectrum, forward_transform, inverse_transform, make_grid, mass, norm_lp
from .operators import (
    DiscreteOperator,
    FracParams,
    FractionalLaplacian,
    apply_dirichlet,
    apply_kernel,
    apply_symbol,
    build_kernel_table,
    critical_exponents,
    extension_constant,
    heat_kernel,
    normalization_constant,
)
from .resolvent import NonConvergence, Resolvent, ResolventOptions, resolvent, resolvent_linear, t_contraction_gap
from .semigroup import CrandallLiggett, Schedule, Trajectory, evolve, refine_convergence

__version__ = "0.1.0"

__all__ = [
    "Boundary", "Field", "Grid", "Spectrum", "forward_transform", "inverse_transform", "make_grid", "mass",
    "norm_lp", "DiscreteOperator", "FracParams", "FractionalLaplacian", "apply_dirichlet", "apply_kernel",
    "apply_symbol", "build_kernel_table", "critical_exponents", "extension_constant", "heat_kernel",
    "normalization_constant", "NonConvergence", "Resolvent", "ResolventOptions", "resolvent",
    "resolvent_linear", "t_contraction_gap", "CrandallLiggett", "Schedule", "Trajectory", "evolve",
    "refine_convergence", "__version__",
]
