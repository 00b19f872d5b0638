"""Cost-minimizing Skorokhod embedding on a one-dimensional space-time lattice."""

from .barrier import Barrier, extract_barrier, flux_residual, hitting_simulate
from .hjb import AscentOptions, ValuePair, ascend, dual_value, normalize, solve_value
from .lagrangian import LagrangianSpec
from .lattice import Grid, build_grid, green_solve, heat_step
from .measures import DiscreteMeasure, MeasureSpec, build_measure, check_subharmonic_order
from .oracle import assemble_lp, solve_lp_exact
from .potential import potential_flow, quasivariational_residual
from .primal import FlowPair, primal_cost, transport_from_barrier

__version__ = "0.1.0"

__all__ = [
    "AscentOptions",
    "Barrier",
    "DiscreteMeasure",
    "FlowPair",
    "Grid",
    "LagrangianSpec",
    "MeasureSpec",
    "ValuePair",
    "ascend",
    "assemble_lp",
    "build_grid",
    "build_measure",
    "check_subharmonic_order",
    "dual_value",
    "extract_barrier",
    "flux_residual",
    "green_solve",
    "heat_step",
    "hitting_simulate",
    "normalize",
    "potential_flow",
    "primal_cost",
    "quasivariational_residual",
    "solve_lp_exact",
    "solve_value",
    "transport_from_barrier",
]
